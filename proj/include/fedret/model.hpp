#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedret {

// Dense row-major matrix, the only shape the embedder works with.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

enum class Nonlinearity : std::uint8_t { ReLU, Tanh };

// Shape of the trainable embedding MLP. Hidden layers use `nonlinearity`;
// the output layer is linear, optionally followed by row-wise L2
// normalization.
struct EmbedderSpec {
  int input_dim = 32;
  std::vector<int> hidden_dims = {64};
  int output_dim = 16;
  Nonlinearity nonlinearity = Nonlinearity::ReLU;
  bool l2_normalize_output = true;

  // Layer widths including input and output: [f, h..., d].
  std::vector<int> layer_dims() const;
  std::size_t param_count() const;
  void validate() const;  // throws std::invalid_argument
};

// One named contiguous slice of the flat parameter vector.
struct LayerSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 1 for biases
};

// Flat model parameters plus their layout. Immutable by convention: training
// code always works on copies.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerSlice> layout;

  std::size_t size() const { return values.size(); }
};

// Layout for a spec: per layer a weight slice "w<i>" (out x in, row-major)
// followed by a bias slice "b<i>" (out x 1).
std::vector<LayerSlice> make_layout(const EmbedderSpec& spec);

// Deterministic init: weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)],
// biases zero.
ParamVector init_params(const EmbedderSpec& spec, std::uint64_t seed);

struct DescriptorBatch {
  std::size_t dim = 0;
  Matrix descriptors;              // n x dim
  std::vector<std::uint64_t> ids;  // source sample ids, may be empty

  std::span<const double> row(std::size_t r) const { return descriptors.row(r); }
};

// Embed a batch of feature rows. x must have spec.input_dim columns.
DescriptorBatch forward(const ParamVector& params, const EmbedderSpec& spec, const Matrix& x);

// Exact analytic gradient of sum_i <upstream_i, descriptor_i> w.r.t. the
// parameters, including the L2-normalization Jacobian when enabled.
ParamVector backward(const ParamVector& params, const EmbedderSpec& spec, const Matrix& x,
                     const Matrix& upstream_grad);

double euclidean_distance(std::span<const double> a, std::span<const double> b);

// Checkpoint format: layout header followed by little-endian 64-bit floats.
void save_params(const std::string& path, const ParamVector& params);
ParamVector load_params(const std::string& path);

// FNV-1a over the raw parameter bytes; used for round records.
std::uint64_t param_checksum(const ParamVector& params);

}  // namespace fedret
