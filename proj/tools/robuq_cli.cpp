// robuq: command-line front end. Every subcommand re-checks the cheap
// invariants of what it just computed and exits 3 if one fails.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "robuq/allocator.hpp"
#include "robuq/deploy.hpp"
#include "robuq/error.hpp"
#include "robuq/gaussanalysis.hpp"
#include "robuq/hadamard.hpp"
#include "robuq/lowrank.hpp"
#include "robuq/profiler.hpp"
#include "robuq/quant.hpp"
#include "robuq/tensorio.hpp"

namespace fs = std::filesystem;
using namespace robuq;

namespace {

constexpr int kExitError = 2;
constexpr int kExitInvariant = 3;

struct InvariantFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw InvariantFailure(what);
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const long long v = std::stoll(item, &used);
    if (used != item.size() || v < 0) throw ValidationError("bad list entry '" + item + "'");
    out.push_back(static_cast<T>(v));
  }
  if (out.empty()) throw ValidationError("empty list '" + s + "'");
  return out;
}

// ---- hadamard -------------------------------------------------------------

struct HadamardArgs {
  std::string in, out, report;
  bool roundtrip = false;
};

int cmd_hadamard(const HadamardArgs& a) {
  const MatrixF32 x = load_matrix(a.in);
  const HadamardPlan plan(x.cols());
  const MatrixF32 y = transform_tokens(x, plan);

  // H is symmetric, so H^T H - I is measured as H(H e_i) - e_i.
  double ortho = 0.0;
  std::vector<double> e(plan.dim());
  for (std::size_t i = 0; i < plan.dim(); ++i) {
    std::fill(e.begin(), e.end(), 0.0);
    e[i] = 1.0;
    fwht_inplace(std::span<double>(e), plan);
    fwht_inplace(std::span<double>(e), plan);
    for (std::size_t j = 0; j < e.size(); ++j) ortho = std::max(ortho, std::abs(e[j] - (i == j ? 1.0 : 0.0)));
  }

  double drift = 0.0;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    double nx = 0.0;
    double ny = 0.0;
    for (float v : x.row(t)) nx += double(v) * v;
    for (float v : y.row(t)) ny += double(v) * v;
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    drift = std::max(drift, std::abs(ny - nx) / std::max(nx, 1e-30));
  }
  double roundtrip_err = 0.0;
  if (a.roundtrip) roundtrip_err = max_abs_diff(transform_tokens(y, plan), x);

  save_matrix(y, a.out);
  nlohmann::ordered_json j;
  j["rows"] = x.rows();
  j["cols"] = x.cols();
  j["block_size"] = plan.block_size();
  j["orthogonality_residual"] = ortho;
  j["max_norm_drift"] = drift;
  if (a.roundtrip) j["roundtrip_max_abs_err"] = roundtrip_err;
  if (!a.report.empty()) write_text_file(a.report, j.dump(2) + "\n");

  check(ortho < 1e-5, "orthogonality residual " + std::to_string(ortho));
  check(drift < 1e-5, "norm drift " + std::to_string(drift));
  if (a.roundtrip) {
    double scale = 1.0;
    for (float v : x.data()) scale = std::max(scale, static_cast<double>(std::abs(v)));
    check(roundtrip_err < 1e-5 * scale, "round trip error " + std::to_string(roundtrip_err));
  }
  return 0;
}

// ---- quantize / codebook --------------------------------------------------

GaussCodebook build_codebook(int bits, bool uniform) {
  if (bits < 1 || bits > 8) throw ValidationError("bits must be in 1..8");
  return uniform ? uniform_gauss_codebook(bits) : lloyd_max(bits);
}

struct QuantizeArgs {
  std::string weights, out_dir;
  std::size_t rank = kDefaultRank;
  int bits = 4;
  bool uniform = false;
  bool lloyd = false;
  bool per_channel = false;
  bool no_center = false;
  std::uint64_t seed = 42;
};

int cmd_quantize(const QuantizeArgs& a) {
  const MatrixF32 w = load_matrix(a.weights);
  const GaussCodebook cb = build_codebook(a.bits, a.uniform);
  LayerOptions opts;
  opts.rank = a.rank;
  opts.center = !a.no_center;
  opts.granularity = a.per_channel ? TernaryGranularity::per_output_channel : TernaryGranularity::per_tensor;
  opts.svd.seed = a.seed;
  const QuantLinearLayer layer = init_layer(w, cb, opts);
  fs::create_directories(a.out_dir);
  save_layer(layer, a.out_dir);

  const MatrixF32 rec = reconstruct_weight(layer);
  const double wnorm = frobenius_norm(w);
  const double err = frobenius_norm(w - rec) / std::max(wnorm, 1e-30);
  const double branch = frobenius_norm(layer.branch.product());
  const double share = wnorm > 0 ? branch * branch / (wnorm * wnorm) : 0.0;

  nlohmann::ordered_json j;
  j["rows"] = w.rows();
  j["cols"] = w.cols();
  j["rank"] = layer.branch.rank();
  j["bits"] = a.bits;
  j["uniform"] = a.uniform;
  j["relative_reconstruction_error"] = err;
  j["branch_energy_share"] = share;
  j["codebook_mse"] = cb.expected_mse;
  const std::string summary = j.dump(2) + "\n";
  write_text_file(fs::path(a.out_dir) / "summary.json", summary);
  std::cout << summary;

  for (auto v : layer.wq.values) check(v >= -1 && v <= 1, "non-ternary weight value");
  cb.validate();
  const QuantLinearLayer back = load_layer(a.out_dir);
  check(back.wq.values == layer.wq.values && back.branch.a == layer.branch.a && back.branch.b == layer.branch.b,
        "saved layer does not reload identically");
  check(std::isfinite(err), "reconstruction error is not finite");
  return 0;
}

struct CodebookArgs {
  int bits = 4;
  bool uniform = false;
  std::string out;
};

int cmd_codebook(const CodebookArgs& a) {
  const GaussCodebook cb = build_codebook(a.bits, a.uniform);
  cb.validate();
  emit(format_codebook(cb), a.out);
  for (std::size_t i = 0; i < cb.size(); ++i)
    check(std::abs(cb.levels[i] + cb.levels[cb.size() - 1 - i]) < 1e-9, "codebook is not symmetric");
  return 0;
}

// ---- gauss-report ---------------------------------------------------------

struct GaussArgs {
  std::string activations, out;
  std::size_t bins = 16;
  std::uint64_t seed = 42;
};

int cmd_gauss_report(const GaussArgs& a) {
  const MatrixF32 x = load_matrix(a.activations);
  const GaussReport r = gauss_report(x, a.bins, a.seed);
  emit(gauss_report_json(r), a.out);
  check(r.sigma_t2 >= 0.0 && std::isfinite(r.sigma_t2), "sigma_t^2 is negative or not finite");
  check(r.ks_distance >= 0.0 && r.ks_distance <= 1.0, "KS distance outside [0, 1]");
  check(r.mean_nmi >= 0.0 && r.mean_nmi <= 1.0, "NMI outside [0, 1]");
  // Mean of the transformed variances equals sigma_t^2 exactly.
  double mean_var = 0.0;
  for (double v : r.per_coord_var) mean_var += v;
  if (!r.per_coord_var.empty()) mean_var /= static_cast<double>(r.per_coord_var.size());
  check(std::abs(mean_var - r.sigma_t2) <= 1e-4 * std::max(r.sigma_t2, 1e-30) + 1e-12,
        "trace of the covariance changed under the transform");
  return 0;
}

// ---- profile --------------------------------------------------------------

struct ProfileArgs {
  std::string widths = "64,64,64,64,32";
  std::string bits = "1,2,3,4,32";
  std::string out, sweep, sweep_out;
  int steps = 100;
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t rank = 4;
  bool sgd = false;
  double target = 2.5;
  int final_steps = 500;
  std::uint64_t seed = 42;
};

int cmd_profile(const ProfileArgs& a) {
  const auto widths = parse_list<std::size_t>(a.widths);
  const auto bits = parse_list<int>(a.bits);
  const ToyTask task = make_toy_task(widths, a.seed);
  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.learning_rate = a.lr;
  cfg.batch = a.batch;
  cfg.seed = a.seed;
  cfg.rank = a.rank;
  cfg.optimizer = a.sgd ? Optimizer::sgd : Optimizer::adam;
  const SensitivityTable table = profile_sensitivity(task.teacher, task, bits, cfg);
  emit(format_sensitivity(table), a.out);
  for (std::size_t l = 0; l < table.layers.size(); ++l)
    for (std::size_t j = 0; j < table.bits.size(); ++j) {
      if (table.bits[j] == 32) check(table.delta_loss(l, j) == 0.0, "dL at 32 bits is not zero");
      check(std::isfinite(table.delta_loss(l, j)), "non-finite loss gap");
    }

  if (!a.sweep.empty()) {
    SweepConfig sc;
    sc.profile = cfg;
    std::vector<int> bit_set;
    for (int b : bits)
      if (b != 32) bit_set.push_back(b);
    sc.bit_set = bit_set;
    sc.target_avg_bits = a.target;
    sc.final_steps = a.final_steps;
    const auto rows = steps_sweep(task.teacher, task, parse_list<int>(a.sweep), sc);
    emit(format_sweep(rows), a.sweep_out);
    for (const auto& r : rows) check(std::isfinite(r.final_loss), "non-finite sweep loss");
  }
  return 0;
}

// ---- allocate -------------------------------------------------------------

struct AllocateArgs {
  std::string sensitivity, out;
  double target = 3.0;
  double beta = 1000.0;
  std::string bits = "1,2,3,4";
  bool brute_force = false;
};

int cmd_allocate(const AllocateArgs& a) {
  AllocationProblem p;
  p.table = load_sensitivity(a.sensitivity);
  p.target_avg_bits = a.target;
  p.beta = a.beta;
  p.bit_set = parse_list<int>(a.bits);
  const Allocation alloc = a.brute_force ? brute_force_allocate(p) : dp_allocate(p);
  emit(allocation_json(alloc, p), a.out);

  for (std::size_t i = 0; i < p.table.layers.size(); ++i) {
    const auto& spec = p.table.layers[i];
    const int b = alloc.bits_for(spec.name);
    if (spec.fixed_bits) {
      check(b == *spec.fixed_bits, "fixed layer '" + spec.name + "' changed bits");
    } else {
      check(std::find(p.bit_set.begin(), p.bit_set.end(), b) != p.bit_set.end(),
            "layer '" + spec.name + "' got a bit width outside the set");
    }
  }
  const double slack = a.brute_force ? 1e-9 : p.bit_set.back() * static_cast<double>(p.table.layers.size()) / p.beta;
  check(alloc.achieved_avg_bits <= p.target_avg_bits + slack, "allocation exceeds the budget");
  return 0;
}

// ---- pack / unpack --------------------------------------------------------

struct PackArgs {
  std::string in, out;
};

int cmd_pack(const PackArgs& a) {
  const MatrixF32 m = load_matrix(a.in);
  std::vector<std::int8_t> v;
  v.reserve(m.size());
  for (float x : m.data()) {
    if (x != -1.0f && x != 0.0f && x != 1.0f) throw ValidationError("pack: input holds a non-ternary value");
    v.push_back(static_cast<std::int8_t>(x));
  }
  const PackedTernary p = pack_ternary(v);
  save_packed(p, a.out);
  nlohmann::ordered_json j;
  j["count"] = p.count;
  j["bytes"] = p.bytes.size();
  j["fp32_bytes"] = 4 * p.count;
  j["compression"] = p.bytes.empty() ? 0.0 : 4.0 * static_cast<double>(p.count) / static_cast<double>(p.bytes.size());
  std::cout << j.dump(2) << "\n";
  check(unpack_ternary(load_packed(a.out)) == v, "packed file does not unpack to the input");
  return 0;
}

struct UnpackArgs {
  std::string in, out;
  std::size_t cols = 0;
};

int cmd_unpack(const UnpackArgs& a) {
  const PackedTernary p = load_packed(a.in);
  const auto v = unpack_ternary(p);
  const std::size_t cols = a.cols ? a.cols : v.size();
  if (cols == 0 || v.size() % cols != 0) {
    if (!v.empty()) throw DimensionError("unpack: " + std::to_string(v.size()) + " values do not fill --cols rows");
  }
  std::vector<float> f(v.begin(), v.end());
  const std::size_t rows = cols ? v.size() / cols : 0;
  save_matrix(MatrixF32(rows, cols ? cols : 0, std::move(f)), a.out);
  check(pack_ternary(v).bytes == p.bytes, "repacking does not reproduce the file");
  return 0;
}

// ---- flops ----------------------------------------------------------------

struct FlopsArgs {
  std::string config, json;
};

int cmd_flops(const FlopsArgs& a) {
  const FlopsConfig c = load_flops_config(a.config);
  const FlopsReport r = model_flops(c);
  std::cout << format_flops_table(r);
  if (!a.json.empty()) write_text_file(a.json, flops_report_json(r));
  double sum = 0.0;
  for (auto it = r.rows.rbegin(); it != r.rows.rend(); ++it) sum += it->weighted_gflops;
  check(std::abs(sum - r.total_gflops) <= 1e-12 * std::max(1.0, sum), "total depends on entry order");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robuq: ternary-weight, Gaussianized-activation quantization toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 42;
  app.add_option("--seed", seed, "RNG seed (ROBUQ_SEED overrides)");

  HadamardArgs had;
  auto* c_had = app.add_subcommand("hadamard", "Hadamard-transform every row of an RBQ1 matrix");
  c_had->add_option("--in", had.in)->required();
  c_had->add_option("--out", had.out)->required();
  c_had->add_option("--report", had.report, "JSON report path");
  c_had->add_flag("--roundtrip", had.roundtrip, "also check that a second transform restores the input");

  QuantizeArgs qa;
  auto* c_q = app.add_subcommand("quantize", "Ternary + low-rank layer initialisation");
  c_q->add_option("--weights", qa.weights)->required();
  c_q->add_option("--out-dir", qa.out_dir)->required();
  c_q->add_option("--rank", qa.rank);
  c_q->add_option("--bits", qa.bits);
  auto* f_uniform = c_q->add_flag("--uniform", qa.uniform, "uniform activation codebook");
  auto* f_lloyd = c_q->add_flag("--lloyd", qa.lloyd, "Lloyd-Max activation codebook (default)");
  f_uniform->excludes(f_lloyd);
  c_q->add_flag("--per-channel", qa.per_channel, "one ternary scale per output row");
  c_q->add_flag("--no-center", qa.no_center, "do not subtract the token mean before quantizing");

  CodebookArgs cba;
  auto* c_cb = app.add_subcommand("codebook", "Print an N(0,1) activation codebook as CSV");
  c_cb->add_option("--bits", cba.bits);
  c_cb->add_flag("--uniform", cba.uniform);
  c_cb->add_option("--out", cba.out);

  GaussArgs ga;
  auto* c_g = app.add_subcommand("gauss-report", "Gaussianization statistics of an activation matrix");
  c_g->add_option("--activations", ga.activations)->required();
  c_g->add_option("--bins", ga.bins);
  c_g->add_option("--out", ga.out);

  ProfileArgs pa;
  auto* c_p = app.add_subcommand("profile", "Per-layer QAT sensitivity table on a toy model");
  c_p->add_option("--widths", pa.widths, "comma list, input first");
  c_p->add_option("--bits", pa.bits);
  c_p->add_option("--steps", pa.steps);
  c_p->add_option("--lr", pa.lr);
  c_p->add_option("--batch", pa.batch);
  c_p->add_option("--rank", pa.rank);
  c_p->add_flag("--sgd", pa.sgd);
  c_p->add_option("--out", pa.out, "sensitivity CSV");
  c_p->add_option("--sweep", pa.sweep, "comma list of profiling step counts");
  c_p->add_option("--sweep-out", pa.sweep_out);
  c_p->add_option("--target", pa.target, "average bits used by the sweep allocation");
  c_p->add_option("--final-steps", pa.final_steps);

  AllocateArgs aa;
  auto* c_a = app.add_subcommand("allocate", "DP activation bit allocation from a sensitivity CSV");
  c_a->add_option("--sensitivity", aa.sensitivity)->required();
  c_a->add_option("--target", aa.target)->required();
  c_a->add_option("--beta", aa.beta);
  c_a->add_option("--bits", aa.bits);
  c_a->add_option("--out", aa.out);
  c_a->add_flag("--brute-force", aa.brute_force);

  PackArgs pk;
  auto* c_pk = app.add_subcommand("pack", "Pack a ternary RBQ1 matrix 5 values per byte");
  c_pk->add_option("--in", pk.in)->required();
  c_pk->add_option("--out", pk.out)->required();

  UnpackArgs up;
  auto* c_up = app.add_subcommand("unpack", "Unpack an RBQP file into an RBQ1 matrix");
  c_up->add_option("--in", up.in)->required();
  c_up->add_option("--out", up.out)->required();
  c_up->add_option("--cols", up.cols, "row width of the output (default: one row)");

  FlopsArgs fa;
  auto* c_f = app.add_subcommand("flops", "Weighted FLOPs breakdown from a JSON config");
  c_f->add_option("--config", fa.config)->required();
  c_f->add_option("--json", fa.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  if (const char* env = std::getenv("ROBUQ_SEED")) {
    try {
      seed = std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "error: ROBUQ_SEED is not an unsigned integer\n";
      return kExitError;
    }
  }
  qa.seed = ga.seed = pa.seed = seed;

  try {
    if (*c_had) return cmd_hadamard(had);
    if (*c_q) return cmd_quantize(qa);
    if (*c_cb) return cmd_codebook(cba);
    if (*c_g) return cmd_gauss_report(ga);
    if (*c_p) return cmd_profile(pa);
    if (*c_a) return cmd_allocate(aa);
    if (*c_pk) return cmd_pack(pk);
    if (*c_up) return cmd_unpack(up);
    if (*c_f) return cmd_flops(fa);
  } catch (const InvariantFailure& e) {
    std::cerr << "invariant violated: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const InfeasibleError& e) {
    std::cerr << "error: " << e.what() << " (minimum achievable average bits " << e.min_achievable_avg_bits()
              << ")\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
