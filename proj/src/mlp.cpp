#include "optistack/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <random>

#include "optistack/errors.hpp"

namespace optistack::nn {

bool Gradients::all_finite() const {
  for (const auto& w : weights) {
    if (!w.allFinite()) return false;
  }
  for (const auto& b : bias) {
    if (!b.allFinite()) return false;
  }
  return true;
}

Mlp::Mlp(std::vector<int> sizes, OutputHead head, std::uint64_t seed)
    : sizes_(std::move(sizes)), head_(head), seed_(seed) {
  if (sizes_.size() < 2) throw InvalidInputError("an MLP needs at least input and output sizes");
  for (int s : sizes_) {
    if (s < 1) throw InvalidInputError("layer sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weights(r, c) = u(rng);
    }
    for (int r = 0; r < out; ++r) layer.bias(r) = u(rng);
    layers_.push_back(std::move(layer));
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& batch, ForwardCache* cache) const {
  if (batch.rows() != input_size()) {
    throw UsageError("network input has " + std::to_string(batch.rows()) + " rows, expected " +
                     std::to_string(input_size()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Eigen::MatrixXd x = batch;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weights * x;
    z.colwise() += layers_[l].bias;
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(z);
    }
    if (l + 1 < layers_.size()) {
      x = z.cwiseMax(0.0);
    } else if (head_ == OutputHead::Sigmoid) {
      x = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    } else {
      x = std::move(z);
    }
  }
  if (cache) cache->output = x;
  return x;
}

Eigen::VectorXd Mlp::forward_one(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out = forward(x);
  return out.col(0);
}

Gradients Mlp::backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                        const Eigen::MatrixXd* preactivation_grad) const {
  if (cache.pre.size() != layers_.size()) throw UsageError("backward called with a foreign cache");
  if (output_grad.rows() != cache.output.rows() || output_grad.cols() != cache.output.cols()) {
    throw UsageError("output gradient shape does not match the forward output");
  }
  Gradients g;
  g.weights.resize(layers_.size());
  g.bias.resize(layers_.size());

  Eigen::MatrixXd delta;
  if (head_ == OutputHead::Sigmoid) {
    delta = output_grad.cwiseProduct(cache.output.cwiseProduct((1.0 - cache.output.array()).matrix()));
  } else {
    delta = output_grad;
  }
  if (preactivation_grad) delta += *preactivation_grad;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    g.weights[l].noalias() = delta * cache.inputs[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    Eigen::MatrixXd upstream = layers_[l].weights.transpose() * delta;
    if (l > 0) {
      const auto& z = cache.pre[l - 1];
      delta = upstream.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    } else {
      g.input = std::move(upstream);
    }
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) out.push_back(l.weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  }
  return out;
}

void Mlp::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw UsageError("parameter vector has the wrong length");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = flat[k++];
  }
}

AdamState AdamState::for_network(const Mlp& net, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& l : net.layers()) {
    s.m_weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    s.v_weights.push_back(Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()));
    s.m_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    s.v_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return s;
}

namespace {

template <typename Param, typename Grad>
void adam_update(Param& p, const Grad& g, Param& m, Param& v, const AdamState& s, double c1, double c2) {
  m = s.beta1 * m + (1.0 - s.beta1) * g;
  v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
  p.array() -= s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
}

}  // namespace

void optimize_step(Mlp& net, const Gradients& grads, AdamState& state) {
  auto& layers = net.layers();
  if (grads.weights.size() != layers.size() || state.m_weights.size() != layers.size()) {
    throw UsageError("gradient or optimizer state does not match the network");
  }
  if (!grads.all_finite()) throw TrainingError("non-finite gradient");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    adam_update(layers[l].weights, grads.weights[l], state.m_weights[l], state.v_weights[l], state, c1, c2);
    adam_update(layers[l].bias, grads.bias[l], state.m_bias[l], state.v_bias[l], state, c1, c2);
  }
}

void polyak_update(Mlp& target, const Mlp& source, double tau) {
  if (target.sizes() != source.sizes()) throw UsageError("polyak_update on networks of different shapes");
  auto& t = target.layers();
  const auto& s = source.layers();
  for (std::size_t l = 0; l < t.size(); ++l) {
    t[l].weights = tau * s[l].weights + (1.0 - tau) * t[l].weights;
    t[l].bias = tau * s[l].bias + (1.0 - tau) * t[l].bias;
  }
}

namespace {

const char* head_name(OutputHead h) { return h == OutputHead::Sigmoid ? "sigmoid" : "identity"; }

}  // namespace

void save_checkpoint(const Mlp& net, long step, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "optistack-mlp-v1";
  manifest["sizes"] = net.sizes();
  manifest["hidden_activation"] = "relu";
  manifest["output_activation"] = head_name(net.head());
  manifest["step"] = step;
  manifest["seed"] = net.seed();
  manifest["parameter_count"] = net.parameter_count();
  manifest["layout"] = "per layer: weights row-major (out x in), then bias; float64 little-endian";
  {
    std::ofstream m(dir / "manifest.json");
    m << manifest.dump(2) << '\n';
  }
  std::ofstream p(dir / "params.bin", std::ios::binary);
  for (double v : net.flatten()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
    p.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!p) throw ConfigError("failed to write checkpoint to " + dir.string());
}

Mlp load_checkpoint(const std::filesystem::path& dir, long* step) {
  std::ifstream m(dir / "manifest.json");
  if (!m) throw ConfigError("missing checkpoint manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(m);
  const auto head = manifest.at("output_activation").get<std::string>() == "sigmoid" ? OutputHead::Sigmoid
                                                                                       : OutputHead::Identity;
  Mlp net(manifest.at("sizes").get<std::vector<int>>(), head, manifest.at("seed").get<std::uint64_t>());
  if (step) *step = manifest.at("step").get<long>();

  std::ifstream p(dir / "params.bin", std::ios::binary);
  std::vector<double> flat(net.parameter_count());
  for (auto& v : flat) {
    unsigned char bytes[8];
    if (!p.read(reinterpret_cast<char*>(bytes), 8)) throw ConfigError("truncated checkpoint parameters");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  net.assign(flat);
  return net;
}

}  // namespace optistack::nn
