#pragma once

// Locale-independent shortest round-trip number formatting for the text formats.

#include <array>
#include <charconv>
#include <string>
#include <string_view>

namespace robuq::detail {

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

template <typename Num>
bool parse_number(std::string_view s, Num& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && first != last;
}

}  // namespace robuq::detail
