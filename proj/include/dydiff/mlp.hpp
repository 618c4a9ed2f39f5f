#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dydiff/matrix.hpp"
#include "json.hpp"

namespace dydiff {

enum class Activation { relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Activations recorded by a forward pass, consumed by Mlp::backward.
struct MlpTape {
  // layer_inputs[k] is the input of affine layer k; layer_inputs[0] is x.
  std::vector<Matrix> layer_inputs;
  Matrix output;
};

struct MlpGradients {
  // Same layout as Mlp::parameters().
  std::vector<double> parameters;
  // d(loss)/d(input), shape of the forward input.
  Matrix input;
};

// Dense feed-forward network. Hidden layers use `activation`; the output layer
// is affine unless `output_tanh` is set. All parameters live in one flat
// buffer laid out as [W_0, b_0, W_1, b_1, ...] with W_k row-major
// (layer_sizes[k+1] x layer_sizes[k]).
class Mlp {
 public:
  Mlp() = default;
  // Zero-initialised parameters.
  Mlp(std::vector<std::size_t> layer_sizes, Activation activation, bool output_tanh = false);

  // Glorot-uniform weights, bound sqrt(6 / (fan_in + fan_out)), zero biases.
  static Mlp init(std::vector<std::size_t> layer_sizes, Activation activation,
                  std::uint64_t seed, bool output_tanh = false);

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  Activation activation() const { return activation_; }
  bool output_tanh() const { return output_tanh_; }
  std::size_t num_layers() const { return layer_sizes_.size() - 1; }
  std::size_t input_dim() const { return layer_sizes_.front(); }
  std::size_t output_dim() const { return layer_sizes_.back(); }
  std::size_t parameter_count() const { return params_.size(); }

  ConstMatrixRef weight(std::size_t layer) const;
  MatrixRef weight(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  Matrix forward(ConstMatrixRef x) const;
  MlpTape forward_tape(ConstMatrixRef x) const;
  // Reverse-mode gradients of sum(upstream .* forward(x)).
  MlpGradients backward(const MlpTape& tape, ConstMatrixRef upstream) const;

 private:
  void check_input(ConstMatrixRef x) const;

  std::vector<std::size_t> layer_sizes_;
  Activation activation_ = Activation::relu;
  bool output_tanh_ = false;
  std::vector<double> params_;
  std::vector<std::size_t> weight_offsets_;
  std::vector<std::size_t> bias_offsets_;
};

MlpGradients mlp_grad(const Mlp& mlp, ConstMatrixRef x, ConstMatrixRef upstream);

// Checkpoint document {"format":"dydiff-mlp-v1", ...}.
nlohmann::json mlp_to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& doc);

}  // namespace dydiff
