#pragma once

// Small dense + LSTM network toolkit with hand-written gradients.
//
// Batches are stored column-wise: an input batch of N samples with k
// features is a k x N matrix. All arithmetic is double precision.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace racerl::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh, sigmoid, linear };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::linear;

  int inputs() const { return static_cast<int>(weight.cols()); }
  int outputs() const { return static_cast<int>(weight.rows()); }
};

/// LSTM cell. Gate rows are stacked as [input; forget; output; candidate],
/// each block `hidden_size()` rows tall.
struct LstmParams {
  Matrix input_weight;   // 4h x k
  Matrix hidden_weight;  // 4h x h
  Vector bias;           // 4h

  int input_size() const { return static_cast<int>(input_weight.cols()); }
  int hidden_size() const { return static_cast<int>(hidden_weight.cols()); }
};

struct LstmState {
  Vector hidden;
  Vector cell;

  static LstmState zeros(int hidden_size);
};

/// A stack of dense layers, optionally preceded by an LSTM cell that consumes
/// a sequence and hands its final hidden state to the first dense layer.
/// The same type doubles as a gradient container.
struct NetworkParams {
  std::vector<DenseLayer> layers;
  std::optional<LstmParams> lstm;

  int input_size() const;
  int output_size() const;
  std::size_t parameter_count() const;
};

bool same_shape(const NetworkParams& a, const NetworkParams& b);
NetworkParams zeros_like(const NetworkParams& params);
bool all_finite(const NetworkParams& params);

/// One contiguous parameter tensor, tagged with the dense layer it belongs to
/// (-1 for the LSTM cell).
struct ParamBlock {
  std::span<double> values;
  int layer;
};
struct ConstParamBlock {
  std::span<const double> values;
  int layer;
};

std::vector<ParamBlock> blocks(NetworkParams& params);
std::vector<ConstParamBlock> blocks(const NetworkParams& params);

// ---------------------------------------------------------------------------
// Construction

struct LayerSpec {
  int outputs;
  Activation activation;
};

/// Dense stack with fan-in uniform init U(-1/sqrt(in), 1/sqrt(in)); the last
/// layer is drawn from U(-final_scale, final_scale).
NetworkParams make_mlp(int inputs, std::span<const LayerSpec> layers, std::mt19937_64& rng,
                       double final_scale = 3e-3);

LstmParams make_lstm(int inputs, int hidden, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Dense forward / backward

struct ForwardCache {
  std::vector<Matrix> inputs;   // input to each layer
  std::vector<Matrix> outputs;  // post-activation output of each layer
};

Matrix forward(const NetworkParams& params, const Matrix& input, ForwardCache* cache = nullptr);
Vector forward(const NetworkParams& params, const Vector& input);

struct Gradients {
  NetworkParams params;
  Matrix input;
};

/// Gradients of L = sum(output_gradient .* output) with respect to every
/// parameter (summed over the batch) and to the input.
Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                   const Matrix& output_gradient, bool want_param_gradients = true);

// ---------------------------------------------------------------------------
// LSTM

std::pair<Vector, LstmState> lstm_step(const LstmParams& cell, const Vector& input,
                                       const LstmState& state);

struct LstmCache {
  struct Step {
    Matrix input, hidden_prev, cell_prev;
    Matrix in_gate, forget_gate, out_gate, candidate;
    Matrix cell, cell_tanh;
  };
  std::vector<Step> steps;
};

/// Runs the cell over `inputs` (one k x N matrix per time step) from a zero
/// state and returns the final hidden state (h x N).
Matrix lstm_unroll(const LstmParams& cell, std::span<const Matrix> inputs,
                   LstmCache* cache = nullptr);

struct LstmGradients {
  LstmParams params;
  std::vector<Matrix> inputs;
};

/// Backpropagation through time from a gradient on the final hidden state.
LstmGradients lstm_backward(const LstmParams& cell, const LstmCache& cache,
                            const Matrix& final_hidden_gradient);

// Sequence network: LSTM (required) followed by the dense stack.
struct SequenceCache {
  LstmCache lstm;
  ForwardCache dense;
};

Matrix forward_sequence(const NetworkParams& params, std::span<const Matrix> inputs,
                        SequenceCache* cache = nullptr);

struct SequenceGradients {
  NetworkParams params;
  std::vector<Matrix> inputs;
};

SequenceGradients backward_sequence(const NetworkParams& params, const SequenceCache& cache,
                                    const Matrix& output_gradient);

// ---------------------------------------------------------------------------
// Optimisation

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  NetworkParams first_moment;
  NetworkParams second_moment;
  std::int64_t step = 0;
  AdamConfig config;
};

AdamState make_adam_state(const NetworkParams& params, const AdamConfig& config);

/// Bias-corrected Adam step. Throws NumericError (carrying the layer index)
/// before touching anything if a gradient is not finite.
void adam_update(NetworkParams& params, const NetworkParams& gradients, AdamState& state);

/// target <- tau * source + (1 - tau) * target
void soft_update(const NetworkParams& source, NetworkParams& target, double tau);

// ---------------------------------------------------------------------------
// Serialization. Binary, little-endian host layout, row-major weights.

void write_params(std::ostream& out, const NetworkParams& params);
NetworkParams read_params(std::istream& in);

}  // namespace racerl::nn
