#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "robuq/allocator.hpp"
#include "robuq/hadamard.hpp"
#include "robuq/quant.hpp"
#include "robuq/tensorio.hpp"

// Toy QAT sensitivity profiling. Models are stacks of linear layers with tanh
// between them, run in double. Activations are row-major [batch x features].
namespace robuq {

/// One linear layer. When quantized, the dense weight is replaced by the
/// Hadamard-domain parametrization W H = A B + shadow, the shadow is used
/// through its ternarization and the input through the Gauss quantizer.
struct ToyLayer {
  MatrixF64 w;       // out x in, used while not quantized
  bool quantized = false;
  int act_bits = 32;
  MatrixF64 shadow;  // out x in float shadow of the ternary main branch
  MatrixF64 a;       // out x r
  MatrixF64 b;       // r x in
  bool trainable = true;

  std::size_t in_dim() const noexcept { return w.cols(); }
  std::size_t out_dim() const noexcept { return w.rows(); }
};

struct ToyModel {
  std::vector<ToyLayer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

/// Random layers with N(0, 1/in) entries. widths = {in, hidden..., out}.
ToyModel make_toy_model(const std::vector<std::size_t>& widths, std::uint64_t seed);

/// Switches layer `index` to the quantized path with `act_bits` activation
/// bits and a rank-`rank` FP branch initialised from the SVD of W H.
/// act_bits = 32 leaves the layer untouched.
void quantize_layer(ToyModel& model, std::size_t index, int act_bits, std::size_t rank);

/// Codebook used for b-bit activations (Lloyd-Max, cached).
const GaussCodebook& activation_codebook(int bits);

/// Per-row Gauss fake quantization of Hadamard-domain activations.
MatrixF64 fake_quant_tokens(const MatrixF64& xh, int bits);

/// alpha * ternary(shadow), the weight the quantized main branch applies.
MatrixF64 quantized_weight(const ToyLayer& layer);

struct LinearPass {
  MatrixF64 out;       // batch x out
  MatrixF64 grad_w;    // dense weight grad, or shadow grad when quantized
  MatrixF64 grad_a;
  MatrixF64 grad_b;
  MatrixF64 grad_x;    // batch x in
};

/// Forward through the (possibly quantized) layer and backward with every
/// quantizer treated as identity. A, B and the shadow get exact chain-rule
/// gradients of that surrogate.
LinearPass ste_linear_forward_backward(const ToyLayer& layer, const MatrixF64& x, const MatrixF64& upstream);

MatrixF64 model_forward(const ToyModel& model, const MatrixF64& x);
double mse_loss(const MatrixF64& pred, const MatrixF64& target);

struct LayerGrads {
  MatrixF64 w;  // dense or shadow, matching the layer mode
  MatrixF64 a;
  MatrixF64 b;
};

/// Mean-squared loss and gradients for layers [first_layer, L).
double loss_and_grads(const ToyModel& model, const MatrixF64& x, const MatrixF64& target,
                      std::vector<LayerGrads>& grads, std::size_t first_layer = 0);

/// Frozen teacher, target noise and a fixed validation pool.
struct ToyTask {
  ToyModel teacher;
  double noise = 0.01;
  MatrixF64 val_x;
  MatrixF64 val_y;
  std::uint64_t seed = 42;
};

ToyTask make_toy_task(const std::vector<std::size_t>& widths, std::uint64_t seed, std::size_t val_size = 1000);

enum class Optimizer { sgd, adam };

// Full-scale fine-tuning rate. Far too small for the toy models here.
inline constexpr double kReferenceLearningRate = 1e-5;

struct TrainConfig {
  int steps = 100;
  double learning_rate = 1e-3;
  std::size_t batch = 64;
  std::uint64_t seed = 42;
  Optimizer optimizer = Optimizer::adam;
  std::size_t rank = 4;
};

/// Trains every layer with trainable = true on fresh teacher samples drawn
/// from `stream`. Returns the last training-batch loss.
double train(ToyModel& model, const ToyTask& task, const TrainConfig& config, std::uint64_t stream);

double validation_loss(const ToyModel& model, const ToyTask& task);

/// The full-precision reference is the teacher itself.
/// dL(l, b) = L(only layer l quantized at b, trained config.steps) - L_FP.
SensitivityTable profile_sensitivity(const ToyModel& model, const ToyTask& task, const std::vector<int>& bits,
                                     const TrainConfig& config);

struct SweepConfig {
  TrainConfig profile;               // steps overridden by each grid entry
  std::vector<int> bit_set = {1, 2, 3, 4};
  double target_avg_bits = 2.5;
  double beta = 1000.0;
  int final_steps = 500;             // training of the mixed-precision model
};

struct SweepRow {
  int steps = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<int> bits;  // allocation used
};

std::vector<SweepRow> steps_sweep(const ToyModel& model, const ToyTask& task, const std::vector<int>& grid,
                                  const SweepConfig& config);

/// "steps,initial_loss,final_loss"
std::string format_sweep(const std::vector<SweepRow>& rows);

}  // namespace robuq
