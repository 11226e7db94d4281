#include "daehn/network/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "daehn/simd/kernels.hpp"

namespace daehn::net {

namespace {

std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const BackboneConfig& c) {
  std::vector<std::pair<std::size_t, std::size_t>> s;  // (out, in)
  std::size_t in = c.input_dim;
  for (std::size_t l = 0; l < c.model_depth; ++l) {
    s.emplace_back(c.hidden_dim, in);
    in = c.hidden_dim;
  }
  s.emplace_back(c.output_dim + c.multiplier_dim, in);
  return s;
}

void check_dims(const BackboneConfig& c) {
  if (c.input_dim == 0 || c.output_dim == 0 || c.hidden_dim == 0)
    throw std::invalid_argument("backbone dimensions must be positive");
  if (c.num_softplus > c.multiplier_dim) throw std::invalid_argument("num_softplus exceeds multiplier_dim");
}

}  // namespace

std::size_t layer_parameter_count(const BackboneConfig& c) {
  const std::size_t h = c.hidden_dim, out = c.output_dim + c.multiplier_dim;
  if (c.model_depth == 0) return (c.input_dim + 1) * out;
  return (c.input_dim + 1) * h + (c.model_depth - 1) * (h + 1) * h + (h + 1) * out;
}

std::size_t NetworkParams::weight_count() const {
  std::size_t n = 0;
  for (const auto& L : layers) n += L.weight.size() + L.bias.size();
  return n;
}

std::vector<double> NetworkParams::flatten() const {
  std::vector<double> f;
  f.reserve(parameter_count());
  for (const auto& L : layers) {
    f.insert(f.end(), L.weight.begin(), L.weight.end());
    f.insert(f.end(), L.bias.begin(), L.bias.end());
  }
  f.insert(f.end(), phys_params.begin(), phys_params.end());
  return f;
}

void NetworkParams::unflatten(std::span<const double> f) {
  if (f.size() != parameter_count()) throw std::invalid_argument("unflatten: wrong parameter count");
  std::size_t k = 0;
  for (auto& L : layers) {
    for (auto& w : L.weight) w = f[k++];
    for (auto& b : L.bias) b = f[k++];
  }
  for (auto& p : phys_params) p = f[k++];
}

NetworkParams init(const BackboneConfig& config, std::vector<std::pair<std::string, double>> phys) {
  check_dims(config);
  NetworkParams p;
  p.config = config;
  std::mt19937_64 rng(config.seed);
  for (auto [out, in] : layer_shapes(config)) {
    Layer L;
    L.in = in;
    L.out = out;
    const double bound = std::sqrt(6.0 / double(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    L.weight.resize(out * in);
    for (auto& w : L.weight) w = u(rng);
    L.bias.assign(out, 0.0);
    p.layers.push_back(std::move(L));
  }
  p.input_shift.assign(config.input_dim, 0.0);
  p.input_scale.assign(config.input_dim, 1.0);
  for (auto& [name, value] : phys) {
    p.phys_names.push_back(name);
    p.phys_params.push_back(value);
  }
  return p;
}

NetworkParams init_zero(const BackboneConfig& config) {
  NetworkParams p = init(config);
  for (auto& L : p.layers) std::fill(L.weight.begin(), L.weight.end(), 0.0);
  return p;
}

void fit_standardization(NetworkParams& params, std::span<const double> inputs) {
  const std::size_t d = params.config.input_dim;
  const std::size_t n = inputs.size() / d;
  if (n == 0) return;
  for (std::size_t i = 0; i < d; ++i) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += inputs[r * d + i];
    mean /= double(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (inputs[r * d + i] - mean) * (inputs[r * d + i] - mean);
    var /= double(n);
    params.input_shift[i] = mean;
    params.input_scale[i] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

void jet_forward(const NetworkParams& params, std::span<const double> inputs, const JetRequest& request,
                 JetCache& cache) {
  const auto& cfg = params.config;
  const std::size_t B = inputs.size() / cfg.input_dim;
  const std::size_t A = cfg.input_dim;
  JetRequest req = request;
  if (req.second) req.first = true;
  cache.batch = B;
  cache.num_axes = A;
  cache.request = req;
  cache.channels = 1 + (req.first ? A : 0) + (req.second ? A : 0) + (req.neighbors ? A : 0);
  const std::size_t C = cache.channels, cols = C * B;
  const std::size_t nl = params.layers.size();
  cache.X.resize(nl);
  cache.Z.resize(nl);

  // Value-type channels take the bias and the activation itself.
  std::vector<std::size_t> value_channels{0};
  if (req.neighbors)
    for (std::size_t a = 0; a < A; ++a) value_channels.push_back(cache.ch_neighbor(a));

  auto& X0 = cache.X[0];
  X0.assign(A * cols, 0.0);
  for (std::size_t i = 0; i < A; ++i) {
    const double inv = 1.0 / params.input_scale[i];
    double* row = X0.data() + i * cols;
    for (std::size_t b = 0; b < B; ++b) {
      const double xs = (inputs[b * A + i] - params.input_shift[i]) * inv;
      row[b] = xs;
      if (req.first) row[cache.ch_first(i) * B + b] = inv;
      if (req.neighbors)
        for (std::size_t a = 0; a < A; ++a)
          row[cache.ch_neighbor(a) * B + b] = a == i ? xs + req.delta * inv : xs;
    }
  }

  const auto& k = simd::dispatch();
  const bool tanh_act = cfg.activation == Activation::tanh;
  for (std::size_t l = 0; l < nl; ++l) {
    const Layer& L = params.layers[l];
    auto& Z = cache.Z[l];
    Z.resize(L.out * cols);
    k.gemm_nn(L.out, cols, L.in, L.weight.data(), cache.X[l].data(), Z.data(), false);
    for (std::size_t r = 0; r < L.out; ++r)
      for (std::size_t ch : value_channels) {
        double* z = Z.data() + r * cols + ch * B;
        for (std::size_t b = 0; b < B; ++b) z[b] += L.bias[r];
      }
    if (l + 1 == nl) break;

    auto& Xn = cache.X[l + 1];
    Xn.resize(L.out * cols);
    for (std::size_t r = 0; r < L.out; ++r) {
      const double* z = Z.data() + r * cols;
      double* x = Xn.data() + r * cols;
      for (std::size_t ch : value_channels)
        for (std::size_t b = 0; b < B; ++b) x[ch * B + b] = tanh_act ? std::tanh(z[ch * B + b]) : z[ch * B + b];
      if (!req.first) continue;
      for (std::size_t b = 0; b < B; ++b) {
        const double t = x[b];
        const double a1 = tanh_act ? 1.0 - t * t : 1.0;
        const double a2 = tanh_act ? -2.0 * t * a1 : 0.0;
        for (std::size_t a = 0; a < A; ++a) {
          const double dz = z[cache.ch_first(a) * B + b];
          x[cache.ch_first(a) * B + b] = a1 * dz;
          if (req.second) x[cache.ch_second(a) * B + b] = a2 * dz * dz + a1 * z[cache.ch_second(a) * B + b];
        }
      }
    }
  }
}

void jet_backward(const NetworkParams& params, const JetCache& cache, std::span<const double> out_grad,
                  std::span<double> grad) {
  const std::size_t B = cache.batch, A = cache.num_axes, cols = cache.cols();
  const auto& req = cache.request;
  const std::size_t nl = params.layers.size();
  const bool tanh_act = params.config.activation == Activation::tanh;
  const auto& k = simd::dispatch();

  std::vector<std::size_t> value_channels{0};
  if (req.neighbors)
    for (std::size_t a = 0; a < A; ++a) value_channels.push_back(cache.ch_neighbor(a));

  std::vector<std::size_t> offset(nl);
  for (std::size_t l = 0, o = 0; l < nl; ++l) {
    offset[l] = o;
    o += params.layers[l].weight.size() + params.layers[l].bias.size();
  }

  std::vector<double> G(out_grad.begin(), out_grad.end()), GX;
  for (std::size_t l = nl; l-- > 0;) {
    const Layer& L = params.layers[l];
    double* gw = grad.data() + offset[l];
    double* gb = gw + L.weight.size();
    k.gemm_nt_acc(L.out, cols, L.in, G.data(), cache.X[l].data(), gw);
    for (std::size_t r = 0; r < L.out; ++r)
      for (std::size_t ch : value_channels) {
        const double* g = G.data() + r * cols + ch * B;
        double s = 0.0;
        for (std::size_t b = 0; b < B; ++b) s += g[b];
        gb[r] += s;
      }
    if (l == 0) break;

    GX.resize(L.in * cols);
    k.gemm_tn(L.out, cols, L.in, L.weight.data(), G.data(), GX.data(), false);

    // Through the activation of layer l-1.
    const auto& Zp = cache.Z[l - 1];
    const auto& Xa = cache.X[l];
    G.resize(L.in * cols);
    for (std::size_t r = 0; r < L.in; ++r) {
      const double* gx = GX.data() + r * cols;
      const double* z = Zp.data() + r * cols;
      const double* x = Xa.data() + r * cols;
      double* g = G.data() + r * cols;
      if (req.neighbors)
        for (std::size_t a = 0; a < A; ++a) {
          const std::size_t o = cache.ch_neighbor(a) * B;
          for (std::size_t b = 0; b < B; ++b) {
            const double t = x[o + b];
            g[o + b] = gx[o + b] * (tanh_act ? 1.0 - t * t : 1.0);
          }
        }
      for (std::size_t b = 0; b < B; ++b) {
        const double t = x[b];
        const double a1 = tanh_act ? 1.0 - t * t : 1.0;
        const double a2 = tanh_act ? -2.0 * t * a1 : 0.0;
        const double a3 = tanh_act ? -2.0 * a1 * a1 - 2.0 * t * a2 : 0.0;
        double g0 = gx[b] * a1;
        if (req.first)
          for (std::size_t a = 0; a < A; ++a) {
            const std::size_t o1 = cache.ch_first(a) * B + b;
            const double dz = z[o1];
            const double g1 = gx[o1];
            g0 += g1 * a2 * dz;
            g[o1] = g1 * a1;
            if (req.second) {
              const std::size_t o2 = cache.ch_second(a) * B + b;
              const double g2 = gx[o2];
              g0 += g2 * (a3 * dz * dz + a2 * z[o2]);
              g[o1] += g2 * 2.0 * a2 * dz;
              g[o2] = g2 * a1;
            }
          }
        g[b] = g0;
      }
    }
  }
}

namespace {

constexpr const char* kMagic = "daehn-checkpoint v1";

void write_array(std::ostream& os, const std::string& name, std::size_t rows, std::size_t cols,
                 const std::vector<double>& v) {
  os << "array " << name << ' ' << rows << ' ' << cols << '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) os << (c ? " " : "") << v[r * cols + c];
    os << '\n';
  }
}

std::vector<double> read_array(std::istream& is, const std::string& name, std::size_t rows, std::size_t cols) {
  std::string tag, got;
  std::size_t r = 0, c = 0;
  if (!(is >> tag >> got >> r >> c) || tag != "array" || got != name || r != rows || c != cols)
    throw std::runtime_error("checkpoint: expected array " + name);
  std::vector<double> v(rows * cols);
  for (auto& x : v)
    if (!(is >> x)) throw std::runtime_error("checkpoint: truncated array " + name);
  return v;
}

}  // namespace

void save_checkpoint(const NetworkParams& p, std::ostream& os) {
  const auto& c = p.config;
  os << kMagic << '\n' << std::setprecision(17);
  os << "input_dim " << c.input_dim << '\n'
     << "output_dim " << c.output_dim << '\n'
     << "multiplier_dim " << c.multiplier_dim << '\n'
     << "hidden_dim " << c.hidden_dim << '\n'
     << "model_depth " << c.model_depth << '\n'
     << "num_softplus " << c.num_softplus << '\n'
     << "activation " << (c.activation == Activation::tanh ? "tanh" : "identity") << '\n'
     << "seed " << c.seed << '\n';
  write_array(os, "input_shift", 1, c.input_dim, p.input_shift);
  write_array(os, "input_scale", 1, c.input_dim, p.input_scale);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    write_array(os, "layer" + std::to_string(l) + ".weight", L.out, L.in, L.weight);
    write_array(os, "layer" + std::to_string(l) + ".bias", 1, L.out, L.bias);
  }
  os << "phys " << p.phys_params.size() << '\n';
  for (std::size_t i = 0; i < p.phys_params.size(); ++i) os << p.phys_names[i] << ' ' << p.phys_params[i] << '\n';
  os << "end\n";
}

NetworkParams load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw std::runtime_error("checkpoint: bad header");
  BackboneConfig c;
  auto field = [&](const char* key, auto& dst) {
    std::string k;
    if (!(is >> k >> dst) || k != key) throw std::runtime_error(std::string("checkpoint: expected ") + key);
  };
  field("input_dim", c.input_dim);
  field("output_dim", c.output_dim);
  field("multiplier_dim", c.multiplier_dim);
  field("hidden_dim", c.hidden_dim);
  field("model_depth", c.model_depth);
  field("num_softplus", c.num_softplus);
  std::string act;
  field("activation", act);
  if (act != "tanh" && act != "identity") throw std::runtime_error("checkpoint: unknown activation " + act);
  c.activation = act == "tanh" ? Activation::tanh : Activation::identity;
  field("seed", c.seed);

  NetworkParams p = init(c);
  p.input_shift = read_array(is, "input_shift", 1, c.input_dim);
  p.input_scale = read_array(is, "input_scale", 1, c.input_dim);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    L.weight = read_array(is, "layer" + std::to_string(l) + ".weight", L.out, L.in);
    L.bias = read_array(is, "layer" + std::to_string(l) + ".bias", 1, L.out);
  }
  std::size_t n = 0;
  field("phys", n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string name;
    double v = 0.0;
    if (!(is >> name >> v)) throw std::runtime_error("checkpoint: truncated phys block");
    p.phys_names.push_back(name);
    p.phys_params.push_back(v);
  }
  std::string end;
  if (!(is >> end) || end != "end") throw std::runtime_error("checkpoint: missing end marker");
  return p;
}

void save_checkpoint(const NetworkParams& params, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  save_checkpoint(params, os);
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace daehn::net
