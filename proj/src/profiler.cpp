#include "robuq/profiler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <random>

#include "numfmt.hpp"
#include "robuq/lowrank.hpp"

namespace robuq {

namespace {

MatrixF64 random_normal(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixF64 m(rows, cols);
  for (double& v : m.data()) v = scale * n(rng);
  return m;
}

// x * w^T without materializing the transpose.
MatrixF64 mul_bt(const MatrixF64& x, const MatrixF64& w) {
  MatrixF64 out(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xr = x.row(i);
    for (std::size_t j = 0; j < w.rows(); ++j) {
      const auto wr = w.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < xr.size(); ++k) s += xr[k] * wr[k];
      out(i, j) = s;
    }
  }
  return out;
}

// g^T * x, summed over the batch.
MatrixF64 mul_at(const MatrixF64& g, const MatrixF64& x) {
  MatrixF64 out(g.cols(), x.cols());
  for (std::size_t t = 0; t < g.rows(); ++t) {
    const auto gr = g.row(t);
    const auto xr = x.row(t);
    for (std::size_t i = 0; i < gr.size(); ++i) {
      const double gi = gr[i];
      if (gi == 0.0) continue;
      auto orow = out.row(i);
      for (std::size_t k = 0; k < xr.size(); ++k) orow[k] += gi * xr[k];
    }
  }
  return out;
}

MatrixF64 hadamard_rows(const MatrixF64& x) { return transform_tokens(x, HadamardPlan(x.cols())); }

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

void sample_batch(const ToyTask& task, std::size_t n, std::mt19937_64& rng, MatrixF64& x, MatrixF64& y) {
  x = random_normal(n, task.teacher.in_dim(), 1.0, rng);
  y = model_forward(task.teacher, x);
  std::normal_distribution<double> eps(0.0, task.noise);
  for (double& v : y.data()) v += eps(rng);
}

struct AdamState {
  MatrixF64 m;
  MatrixF64 v;
};

class ParamUpdater {
 public:
  explicit ParamUpdater(const TrainConfig& c) : cfg_(c) {}

  void step(MatrixF64& p, const MatrixF64& g, AdamState& s) {
    if (p.empty()) return;
    if (cfg_.optimizer == Optimizer::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p.data()[i] -= cfg_.learning_rate * g.data()[i];
      return;
    }
    if (s.m.size() != p.size()) {
      s.m = MatrixF64(p.rows(), p.cols());
      s.v = MatrixF64(p.rows(), p.cols());
    }
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.data()[i];
      double& m = s.m.data()[i];
      double& v = s.v.data()[i];
      m = kBeta1 * m + (1 - kBeta1) * gi;
      v = kBeta2 * v + (1 - kBeta2) * gi * gi;
      p.data()[i] -= cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + kEps);
    }
  }
  void tick() { ++t_; }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  TrainConfig cfg_;
  int t_ = 0;
};

}  // namespace

ToyModel make_toy_model(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ValidationError("make_toy_model: need at least input and output widths");
  std::mt19937_64 rng(seed);
  ToyModel m;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    if (widths[l] == 0 || widths[l + 1] == 0) throw DimensionError("make_toy_model: zero width");
    ToyLayer layer;
    layer.w = random_normal(widths[l + 1], widths[l], 1.0 / std::sqrt(static_cast<double>(widths[l])), rng);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

void quantize_layer(ToyModel& model, std::size_t index, int act_bits, std::size_t rank) {
  if (index >= model.layers.size()) throw DimensionError("quantize_layer: layer index out of range");
  if (!is_supported_bit_width(act_bits)) throw ValidationError("quantize_layer: unsupported bit width");
  if (act_bits == 32) return;
  ToyLayer& l = model.layers[index];
  const MatrixF64 wh = fold_into_weights(l.w, HadamardPlan(l.in_dim()));
  rank = std::min(rank, std::min(l.in_dim(), l.out_dim()));
  const auto svd = truncated_svd(wh, rank);
  l.a = MatrixF64(l.out_dim(), rank);
  l.b = MatrixF64(rank, l.in_dim());
  for (std::size_t k = 0; k < rank; ++k) {
    for (std::size_t i = 0; i < l.out_dim(); ++i) l.a(i, k) = svd.u(i, k) * svd.s[k];
    for (std::size_t j = 0; j < l.in_dim(); ++j) l.b(k, j) = svd.v(j, k);
  }
  l.shadow = rank > 0 ? wh - matmul(l.a, l.b) : wh;
  l.quantized = true;
  l.act_bits = act_bits;
  (void)activation_codebook(act_bits);
}

const GaussCodebook& activation_codebook(int bits) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<GaussCodebook>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[bits];
  if (!slot) slot = std::make_unique<GaussCodebook>(lloyd_max(bits));
  return *slot;
}

MatrixF64 fake_quant_tokens(const MatrixF64& xh, int bits) {
  if (bits == 32) return xh;
  const auto& cb = activation_codebook(bits);
  MatrixF64 q(xh.rows(), xh.cols());
  for (std::size_t t = 0; t < xh.rows(); ++t) {
    const auto r = gauss_fake_quant(xh.row(t), cb, true);
    std::copy(r.begin(), r.end(), q.row(t).begin());
  }
  return q;
}

MatrixF64 quantized_weight(const ToyLayer& layer) { return MatrixF64::cast(ternarize(layer.shadow).dequantize()); }

LinearPass ste_linear_forward_backward(const ToyLayer& layer, const MatrixF64& x, const MatrixF64& upstream) {
  if (x.cols() != layer.in_dim()) throw DimensionError("ste_linear_forward_backward: input width mismatch");
  if (upstream.rows() != x.rows() || upstream.cols() != layer.out_dim()) {
    throw DimensionError("ste_linear_forward_backward: upstream gradient shape mismatch");
  }
  LinearPass p;
  if (!layer.quantized) {
    p.out = mul_bt(x, layer.w);
    p.grad_w = mul_at(upstream, x);
    p.grad_x = matmul(upstream, layer.w);
    return p;
  }
  const MatrixF64 xh = hadamard_rows(x);
  const MatrixF64 q = fake_quant_tokens(xh, layer.act_bits);
  const MatrixF64 wq = quantized_weight(layer);
  const std::size_t r = layer.a.cols();

  p.out = mul_bt(q, wq);
  MatrixF64 grad_xh = matmul(upstream, wq);  // straight through Q
  p.grad_w = mul_at(upstream, q);            // straight through ternarize
  if (r > 0) {
    const MatrixF64 z = mul_bt(xh, layer.b);  // batch x r
    p.out = p.out + mul_bt(z, layer.a);
    const MatrixF64 gz = matmul(upstream, layer.a);  // batch x r
    p.grad_a = mul_at(upstream, z);
    p.grad_b = mul_at(gz, xh);
    grad_xh = grad_xh + matmul(gz, layer.b);
  } else {
    p.grad_a = MatrixF64(layer.out_dim(), 0);
    p.grad_b = MatrixF64(0, layer.in_dim());
  }
  p.grad_x = hadamard_rows(grad_xh);  // H is symmetric
  return p;
}

namespace {

// Forward that keeps per-layer inputs for the backward pass.
MatrixF64 forward_cached(const ToyModel& model, const MatrixF64& x, std::vector<MatrixF64>& inputs) {
  inputs.clear();
  MatrixF64 h = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    inputs.push_back(h);
    const ToyLayer& layer = model.layers[l];
    MatrixF64 z;
    if (!layer.quantized) {
      z = mul_bt(h, layer.w);
    } else {
      const MatrixF64 xh = hadamard_rows(h);
      z = mul_bt(fake_quant_tokens(xh, layer.act_bits), quantized_weight(layer));
      if (layer.a.cols() > 0) z = z + mul_bt(mul_bt(xh, layer.b), layer.a);
    }
    if (l + 1 < model.layers.size()) {
      for (double& v : z.data()) v = std::tanh(v);
    }
    h = std::move(z);
  }
  return h;
}

}  // namespace

MatrixF64 model_forward(const ToyModel& model, const MatrixF64& x) {
  std::vector<MatrixF64> inputs;
  return forward_cached(model, x, inputs);
}

double mse_loss(const MatrixF64& pred, const MatrixF64& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw DimensionError("mse_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  return pred.size() ? s / static_cast<double>(pred.size()) : 0.0;
}

double loss_and_grads(const ToyModel& model, const MatrixF64& x, const MatrixF64& target,
                      std::vector<LayerGrads>& grads, std::size_t first_layer) {
  std::vector<MatrixF64> inputs;
  const MatrixF64 pred = forward_cached(model, x, inputs);
  const double loss = mse_loss(pred, target);
  const std::size_t n = model.layers.size();
  grads.assign(n, {});

  MatrixF64 g(pred.rows(), pred.cols());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g.data()[i] = scale * (pred.data()[i] - target.data()[i]);

  for (std::size_t l = n; l-- > first_layer;) {
    LinearPass p = ste_linear_forward_backward(model.layers[l], inputs[l], g);
    grads[l] = {std::move(p.grad_w), std::move(p.grad_a), std::move(p.grad_b)};
    if (l == first_layer) break;
    // inputs[l] = tanh(z_{l-1}); d tanh = 1 - tanh^2.
    g = std::move(p.grad_x);
    const MatrixF64& h = inputs[l];
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= 1.0 - h.data()[i] * h.data()[i];
  }
  return loss;
}

ToyTask make_toy_task(const std::vector<std::size_t>& widths, std::uint64_t seed, std::size_t val_size) {
  ToyTask task;
  task.seed = seed;
  task.teacher = make_toy_model(widths, seed);
  auto rng = stream_rng(seed, 0xfa11);
  sample_batch(task, val_size, rng, task.val_x, task.val_y);
  return task;
}

double validation_loss(const ToyModel& model, const ToyTask& task) {
  return mse_loss(model_forward(model, task.val_x), task.val_y);
}

double train(ToyModel& model, const ToyTask& task, const TrainConfig& config, std::uint64_t stream) {
  if (config.steps < 0) throw ValidationError("train: steps must be >= 0");
  if (!(config.learning_rate > 0.0)) throw ValidationError("train: learning rate must be positive");
  if (config.batch == 0) throw ValidationError("train: batch must be positive");
  std::size_t first = model.layers.size();
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    if (model.layers[l].trainable) {
      first = l;
      break;
    }
  if (first == model.layers.size() || config.steps == 0) return 0.0;

  auto rng = stream_rng(config.seed, stream);
  ParamUpdater opt(config);
  std::vector<std::array<AdamState, 3>> state(model.layers.size());
  std::vector<LayerGrads> grads;
  MatrixF64 x;
  MatrixF64 y;
  double loss = 0.0;
  for (int s = 0; s < config.steps; ++s) {
    sample_batch(task, config.batch, rng, x, y);
    loss = loss_and_grads(model, x, y, grads, first);
    opt.tick();
    for (std::size_t l = first; l < model.layers.size(); ++l) {
      ToyLayer& layer = model.layers[l];
      if (!layer.trainable) continue;
      if (layer.quantized) {
        opt.step(layer.shadow, grads[l].w, state[l][0]);
        opt.step(layer.a, grads[l].a, state[l][1]);
        opt.step(layer.b, grads[l].b, state[l][2]);
      } else {
        opt.step(layer.w, grads[l].w, state[l][0]);
      }
    }
  }
  return loss;
}

SensitivityTable profile_sensitivity(const ToyModel& model, const ToyTask& task, const std::vector<int>& bits,
                                     const TrainConfig& config) {
  if (model.layers.empty()) throw ValidationError("profile_sensitivity: model has no layers");
  SensitivityTable table;
  table.bits = bits;
  const std::size_t n = model.layers.size();
  table.delta_loss = MatrixF64(n, bits.size());

  double mean_macs = 0.0;
  for (const auto& l : model.layers) mean_macs += static_cast<double>(l.in_dim() * l.out_dim());
  mean_macs /= static_cast<double>(n);
  for (std::size_t l = 0; l < n; ++l) {
    LayerSpec spec;
    spec.name = "fc" + std::to_string(l);
    spec.in_dim = model.layers[l].in_dim();
    spec.out_dim = model.layers[l].out_dim();
    spec.flops_weight = static_cast<double>(spec.in_dim * spec.out_dim) / mean_macs;
    table.layers.push_back(spec);
  }
  table.validate();

  const double l_fp = validation_loss(model, task);
  for (std::size_t l = 0; l < n; ++l) {
    for (std::size_t j = 0; j < bits.size(); ++j) {
      if (bits[j] == 32) {
        table.delta_loss(l, j) = 0.0;  // identical model, nothing to evaluate
        continue;
      }
      ToyModel cell = model;
      for (auto& layer : cell.layers) layer.trainable = false;
      quantize_layer(cell, l, bits[j], config.rank);
      cell.layers[l].trainable = true;
      train(cell, task, config, (static_cast<std::uint64_t>(l) << 8) | static_cast<std::uint64_t>(bits[j]));
      table.delta_loss(l, j) = validation_loss(cell, task) - l_fp;
    }
  }
  return table;
}

std::vector<SweepRow> steps_sweep(const ToyModel& model, const ToyTask& task, const std::vector<int>& grid,
                                  const SweepConfig& config) {
  if (grid.empty()) throw ValidationError("steps_sweep: step grid is empty");
  std::vector<SweepRow> rows;
  for (int s : grid) {
    TrainConfig pc = config.profile;
    pc.steps = s;
    AllocationProblem problem;
    problem.table = profile_sensitivity(model, task, config.bit_set, pc);
    problem.bit_set = config.bit_set;
    problem.target_avg_bits = config.target_avg_bits;
    problem.beta = config.beta;
    const Allocation alloc = dp_allocate(problem);

    SweepRow row;
    row.steps = s;
    ToyModel mixed = model;
    for (std::size_t l = 0; l < mixed.layers.size(); ++l) {
      const int b = alloc.bits_per_layer[l].second;
      row.bits.push_back(b);
      quantize_layer(mixed, l, b, pc.rank);
    }
    row.initial_loss = validation_loss(mixed, task);
    TrainConfig fc = config.profile;
    fc.steps = config.final_steps;
    train(mixed, task, fc, 0x5eedull << 16);
    row.final_loss = validation_loss(mixed, task);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::string out = "steps,initial_loss,final_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.steps) + "," + detail::format_double(r.initial_loss) + "," +
           detail::format_double(r.final_loss) + "\n";
  }
  return out;
}

}  // namespace robuq
