#include "fedret/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fedret/rng.hpp"

namespace fedret {

std::vector<int> EmbedderSpec::layer_dims() const {
  std::vector<int> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(output_dim);
  return dims;
}

std::size_t EmbedderSpec::param_count() const {
  std::vector<int> dims = layer_dims();
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p += static_cast<std::size_t>(dims[l]) * dims[l + 1] + dims[l + 1];
  }
  return p;
}

void EmbedderSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw std::invalid_argument("EmbedderSpec: dims must be >= 1");
  }
  for (int h : hidden_dims) {
    if (h < 1) throw std::invalid_argument("EmbedderSpec: dims must be >= 1");
  }
}

std::vector<LayerSlice> make_layout(const EmbedderSpec& spec) {
  std::vector<int> dims = spec.layer_dims();
  std::vector<LayerSlice> layout;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::size_t in = static_cast<std::size_t>(dims[l]);
    std::size_t out = static_cast<std::size_t>(dims[l + 1]);
    layout.push_back({"w" + std::to_string(l), offset, out, in});
    offset += out * in;
    layout.push_back({"b" + std::to_string(l), offset, out, 1});
    offset += out;
  }
  return layout;
}

ParamVector init_params(const EmbedderSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p;
  p.layout = make_layout(spec);
  p.values.assign(spec.param_count(), 0.0);
  Rng rng(seed_of(seed, 0x494e4954ull));  // "INIT"
  std::vector<int> dims = spec.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const LayerSlice& w = p.layout[2 * l];
    double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (std::size_t i = 0; i < w.rows * w.cols; ++i) {
      p.values[w.offset + i] = rng.uniform(-bound, bound);
    }
    // biases stay zero
  }
  return p;
}

namespace {

double activate(double z, Nonlinearity nl) {
  return nl == Nonlinearity::ReLU ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

double activate_grad(double z, double a, Nonlinearity nl) {
  return nl == Nonlinearity::ReLU ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

constexpr double kNormFloor = 1e-12;

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // post-activation per layer (post[0] = input)
  Matrix unnormalized;       // output before L2 normalization
  std::vector<double> denom; // per-row normalization denominator
};

void check_shapes(const ParamVector& params, const EmbedderSpec& spec, const Matrix& x) {
  if (x.cols != static_cast<std::size_t>(spec.input_dim)) {
    throw std::invalid_argument("forward: input width does not match spec.input_dim");
  }
  if (params.values.size() != spec.param_count()) {
    throw std::invalid_argument("forward: parameter count does not match spec");
  }
}

Matrix run_forward(const ParamVector& params, const EmbedderSpec& spec, const Matrix& x,
                   ForwardCache* cache) {
  std::vector<int> dims = spec.layer_dims();
  std::size_t n_layers = dims.size() - 1;
  const std::vector<LayerSlice> layout = make_layout(spec);

  Matrix h = x;
  if (cache) {
    cache->pre.resize(n_layers);
    cache->post.resize(n_layers + 1);
    cache->post[0] = x;
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerSlice& w = layout[2 * l];
    const LayerSlice& b = layout[2 * l + 1];
    std::size_t in = w.cols, out = w.rows;
    Matrix z(h.rows, out);
    for (std::size_t r = 0; r < h.rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = params.values[b.offset + o];
        const double* wrow = &params.values[w.offset + o * in];
        const double* hrow = &h.data[r * in];
        for (std::size_t k = 0; k < in; ++k) acc += wrow[k] * hrow[k];
        z.at(r, o) = acc;
      }
    }
    if (cache) cache->pre[l] = z;
    bool last = (l + 1 == n_layers);
    if (!last) {
      for (double& v : z.data) v = activate(v, spec.nonlinearity);
    }
    if (cache) cache->post[l + 1] = z;
    h = std::move(z);
  }

  if (spec.l2_normalize_output) {
    if (cache) {
      cache->unnormalized = h;
      cache->denom.assign(h.rows, 0.0);
    }
    for (std::size_t r = 0; r < h.rows; ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < h.cols; ++c) sq += h.at(r, c) * h.at(r, c);
      double norm = std::sqrt(sq);
      double denom = norm < kNormFloor ? norm + kNormFloor : norm;
      if (cache) cache->denom[r] = denom;
      for (std::size_t c = 0; c < h.cols; ++c) h.at(r, c) /= denom;
    }
  }
  return h;
}

}  // namespace

DescriptorBatch forward(const ParamVector& params, const EmbedderSpec& spec, const Matrix& x) {
  check_shapes(params, spec, x);
  DescriptorBatch out;
  out.dim = static_cast<std::size_t>(spec.output_dim);
  out.descriptors = run_forward(params, spec, x, nullptr);
  return out;
}

ParamVector backward(const ParamVector& params, const EmbedderSpec& spec, const Matrix& x,
                     const Matrix& upstream_grad) {
  check_shapes(params, spec, x);
  if (upstream_grad.rows != x.rows ||
      upstream_grad.cols != static_cast<std::size_t>(spec.output_dim)) {
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  }

  ForwardCache cache;
  run_forward(params, spec, x, &cache);

  std::vector<int> dims = spec.layer_dims();
  std::size_t n_layers = dims.size() - 1;
  const std::vector<LayerSlice> layout = make_layout(spec);

  ParamVector grad;
  grad.layout = layout;
  grad.values.assign(params.values.size(), 0.0);

  // Gradient flowing into the raw (pre-normalization) output.
  Matrix g = upstream_grad;
  if (spec.l2_normalize_output) {
    const Matrix& v = cache.unnormalized;
    for (std::size_t r = 0; r < g.rows; ++r) {
      double denom = cache.denom[r];
      double sq = 0.0;
      for (std::size_t c = 0; c < v.cols; ++c) sq += v.at(r, c) * v.at(r, c);
      double norm = std::sqrt(sq);
      // y = v / denom; dL/dv = g/denom - (g.v) * v * d(1/denom)/dv term.
      double gv = 0.0;
      for (std::size_t c = 0; c < v.cols; ++c) gv += g.at(r, c) * v.at(r, c);
      for (std::size_t c = 0; c < v.cols; ++c) {
        double dnorm_dv = norm > 0.0 ? v.at(r, c) / norm : 0.0;
        g.at(r, c) = g.at(r, c) / denom - gv * dnorm_dv / (denom * denom);
      }
    }
  }

  // Backprop through the linear layers, last to first.
  for (std::size_t l = n_layers; l-- > 0;) {
    const LayerSlice& w = layout[2 * l];
    const LayerSlice& b = layout[2 * l + 1];
    std::size_t in = w.cols, out = w.rows;
    const Matrix& input = cache.post[l];

    // g currently holds dL/d(post-activation of layer l). Convert to
    // dL/d(pre-activation); the output layer has no nonlinearity.
    if (l + 1 != n_layers) {
      const Matrix& pre = cache.pre[l];
      const Matrix& post = cache.post[l + 1];
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) {
          g.at(r, o) *= activate_grad(pre.at(r, o), post.at(r, o), spec.nonlinearity);
        }
      }
    }

    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double go = g.at(r, o);
        if (go == 0.0) continue;
        double* wgrad = &grad.values[w.offset + o * in];
        const double* hrow = &input.data[r * in];
        for (std::size_t k = 0; k < in; ++k) wgrad[k] += go * hrow[k];
        grad.values[b.offset + o] += go;
      }
    }

    if (l > 0) {
      Matrix gin(g.rows, in);
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t k = 0; k < in; ++k) {
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) {
            acc += g.at(r, o) * params.values[w.offset + o * in + k];
          }
          gin.at(r, k) = acc;
        }
      }
      g = std::move(gin);
    }
  }
  return grad;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("euclidean_distance: dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

namespace {
constexpr char kMagic[4] = {'F', 'R', 'P', '1'};

template <typename T>
void write_raw(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void save_params(const std::string& path, const ParamVector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out.write(kMagic, 4);
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(params.layout.size()));
  for (const LayerSlice& s : params.layout) {
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    write_raw<std::uint64_t>(out, s.offset);
    write_raw<std::uint64_t>(out, s.rows);
    write_raw<std::uint64_t>(out, s.cols);
  }
  write_raw<std::uint64_t>(out, params.values.size());
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

ParamVector load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("load_params: bad checkpoint header in " + path);
  }
  ParamVector p;
  auto n_slices = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_slices; ++i) {
    LayerSlice s;
    auto len = read_raw<std::uint32_t>(in);
    s.name.resize(len);
    in.read(s.name.data(), len);
    s.offset = read_raw<std::uint64_t>(in);
    s.rows = read_raw<std::uint64_t>(in);
    s.cols = read_raw<std::uint64_t>(in);
    p.layout.push_back(std::move(s));
  }
  auto count = read_raw<std::uint64_t>(in);
  p.values.resize(count);
  in.read(reinterpret_cast<char*>(p.values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("load_params: truncated checkpoint " + path);
  return p;
}

std::uint64_t param_checksum(const ParamVector& params) {
  std::uint64_t h = 1469598103934665603ull;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(params.values.data());
  std::size_t n = params.values.size() * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace fedret
