#include "dydiff/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dydiff/error.hpp"
#include "dydiff/kernels.hpp"

namespace dydiff {

namespace {

constexpr const char* kMlpFormat = "dydiff-mlp-v1";

void apply_activation(Activation a, std::span<double> v) {
  if (a == Activation::relu) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
  } else {
    for (double& x : v) x = std::tanh(x);
  }
}

// Multiplies g in place by the activation derivative, expressed through the
// post-activation values y.
void activation_backward(Activation a, std::span<const double> y, std::span<double> g) {
  if (a == Activation::relu) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(y[i] > 0.0)) g[i] = 0.0;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Activation activation, bool output_tanh)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation), output_tanh_(output_tanh) {
  if (layer_sizes_.size() < 2) throw ConfigError("Mlp: need at least 2 layer sizes");
  for (std::size_t s : layer_sizes_)
    if (s == 0) throw ConfigError("Mlp: layer sizes must be positive");
  std::size_t offset = 0;
  for (std::size_t k = 0; k + 1 < layer_sizes_.size(); ++k) {
    weight_offsets_.push_back(offset);
    offset += layer_sizes_[k + 1] * layer_sizes_[k];
    bias_offsets_.push_back(offset);
    offset += layer_sizes_[k + 1];
  }
  params_.assign(offset, 0.0);
}

Mlp Mlp::init(std::vector<std::size_t> layer_sizes, Activation activation, std::uint64_t seed,
              bool output_tanh) {
  Mlp mlp(std::move(layer_sizes), activation, output_tanh);
  std::mt19937_64 engine(seed);
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    const double fan_in = static_cast<double>(mlp.layer_sizes_[k]);
    const double fan_out = static_cast<double>(mlp.layer_sizes_[k + 1]);
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : mlp.weight(k).flat()) w = dist(engine);
  }
  return mlp;
}

ConstMatrixRef Mlp::weight(std::size_t layer) const {
  return {params_.data() + weight_offsets_[layer], layer_sizes_[layer + 1], layer_sizes_[layer]};
}

MatrixRef Mlp::weight(std::size_t layer) {
  return {params_.data() + weight_offsets_[layer], layer_sizes_[layer + 1], layer_sizes_[layer]};
}

std::span<const double> Mlp::bias(std::size_t layer) const {
  return {params_.data() + bias_offsets_[layer], layer_sizes_[layer + 1]};
}

std::span<double> Mlp::bias(std::size_t layer) {
  return {params_.data() + bias_offsets_[layer], layer_sizes_[layer + 1]};
}

void Mlp::check_input(ConstMatrixRef x) const {
  if (layer_sizes_.empty()) throw DimensionError("Mlp: uninitialised network");
  if (x.cols != input_dim())
    throw DimensionError("Mlp: input width " + std::to_string(x.cols) + " != " +
                         std::to_string(input_dim()));
}

Matrix Mlp::forward(ConstMatrixRef x) const {
  check_input(x);
  Matrix cur(x);
  for (std::size_t k = 0; k < num_layers(); ++k) {
    Matrix next(x.rows, layer_sizes_[k + 1]);
    kernels::affine_forward(cur, weight(k), bias(k), next.view());
    const bool last = k + 1 == num_layers();
    if (!last) apply_activation(activation_, next.flat());
    else if (output_tanh_) apply_activation(Activation::tanh, next.flat());
    cur = std::move(next);
  }
  return cur;
}

MlpTape Mlp::forward_tape(ConstMatrixRef x) const {
  check_input(x);
  MlpTape tape;
  tape.layer_inputs.reserve(num_layers());
  tape.layer_inputs.emplace_back(x);
  for (std::size_t k = 0; k < num_layers(); ++k) {
    Matrix next(x.rows, layer_sizes_[k + 1]);
    kernels::affine_forward(tape.layer_inputs.back(), weight(k), bias(k), next.view());
    const bool last = k + 1 == num_layers();
    if (!last) {
      apply_activation(activation_, next.flat());
      tape.layer_inputs.push_back(std::move(next));
    } else {
      if (output_tanh_) apply_activation(Activation::tanh, next.flat());
      tape.output = std::move(next);
    }
  }
  return tape;
}

MlpGradients Mlp::backward(const MlpTape& tape, ConstMatrixRef upstream) const {
  if (upstream.rows != tape.output.rows() || upstream.cols != tape.output.cols())
    throw DimensionError("Mlp::backward: upstream gradient shape mismatch");
  MlpGradients grads;
  grads.parameters.assign(params_.size(), 0.0);
  Matrix g(upstream);
  if (output_tanh_) activation_backward(Activation::tanh, tape.output.flat(), g.flat());
  for (std::size_t k = num_layers(); k-- > 0;) {
    MatrixRef dw{grads.parameters.data() + weight_offsets_[k], layer_sizes_[k + 1], layer_sizes_[k]};
    std::span<double> db{grads.parameters.data() + bias_offsets_[k], layer_sizes_[k + 1]};
    const Matrix& input = tape.layer_inputs[k];
    kernels::affine_backward_params(g, input, dw, db);
    Matrix gin(g.rows(), layer_sizes_[k]);
    kernels::affine_backward_input(g, weight(k), gin.view());
    if (k > 0) activation_backward(activation_, input.flat(), gin.flat());
    g = std::move(gin);
  }
  grads.input = std::move(g);
  return grads;
}

MlpGradients mlp_grad(const Mlp& mlp, ConstMatrixRef x, ConstMatrixRef upstream) {
  return mlp.backward(mlp.forward_tape(x), upstream);
}

nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json doc;
  doc["format"] = kMlpFormat;
  doc["layer_sizes"] = mlp.layer_sizes();
  doc["activation"] = to_string(mlp.activation());
  doc["output_tanh"] = mlp.output_tanh();
  auto weights = nlohmann::json::array();
  auto biases = nlohmann::json::array();
  for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
    auto w = mlp.weight(k).flat();
    auto b = mlp.bias(k);
    weights.push_back(std::vector<double>(w.begin(), w.end()));
    biases.push_back(std::vector<double>(b.begin(), b.end()));
  }
  doc["weights"] = std::move(weights);
  doc["biases"] = std::move(biases);
  return doc;
}

Mlp mlp_from_json(const nlohmann::json& doc) {
  try {
    const auto format = doc.at("format").get<std::string>();
    if (format != kMlpFormat)
      throw VersionError("mlp checkpoint format '" + format + "', expected '" + kMlpFormat + "'");
    Mlp mlp(doc.at("layer_sizes").get<std::vector<std::size_t>>(),
            activation_from_string(doc.at("activation").get<std::string>()),
            doc.value("output_tanh", false));
    const auto& weights = doc.at("weights");
    const auto& biases = doc.at("biases");
    if (weights.size() != mlp.num_layers() || biases.size() != mlp.num_layers())
      throw DimensionError("mlp checkpoint: layer count mismatch");
    for (std::size_t k = 0; k < mlp.num_layers(); ++k) {
      auto w = weights[k].get<std::vector<double>>();
      auto b = biases[k].get<std::vector<double>>();
      auto dw = mlp.weight(k).flat();
      auto db = mlp.bias(k);
      if (w.size() != dw.size() || b.size() != db.size())
        throw DimensionError("mlp checkpoint: layer " + std::to_string(k) + " shape mismatch");
      std::copy(w.begin(), w.end(), dw.begin());
      std::copy(b.begin(), b.end(), db.begin());
    }
    return mlp;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mlp checkpoint: ") + e.what());
  }
}

}  // namespace dydiff
