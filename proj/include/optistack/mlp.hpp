#pragma once

// Fully connected networks with rectifier hidden layers, analytic reverse-mode
// gradients and an Adam optimizer. Batches are column-major: one sample per
// column.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace optistack::nn {

enum class OutputHead { Identity, Sigmoid };

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input fed to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  Eigen::MatrixXd output;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
  Eigen::MatrixXd input;  // d loss / d input, same shape as the batch

  bool all_finite() const;
};

class Mlp {
 public:
  Mlp() = default;
  // `sizes` lists input, hidden..., output widths. Parameters are drawn
  // uniformly from +-1/sqrt(fan_in).
  Mlp(std::vector<int> sizes, OutputHead head, std::uint64_t seed);

  const std::vector<int>& sizes() const { return sizes_; }
  OutputHead head() const { return head_; }
  std::uint64_t seed() const { return seed_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& batch, ForwardCache* cache = nullptr) const;
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const;
  // `preactivation_grad`, when given, is added to the gradient with respect to
  // the output layer's pre-activation (after the head derivative).
  Gradients backward(const ForwardCache& cache, const Eigen::MatrixXd& output_grad,
                     const Eigen::MatrixXd* preactivation_grad = nullptr) const;

  std::size_t parameter_count() const;
  // Layer by layer: weights row-major, then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

 private:
  std::vector<int> sizes_;
  OutputHead head_ = OutputHead::Identity;
  std::uint64_t seed_ = 0;
  std::vector<DenseLayer> layers_;
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::VectorXd> m_bias, v_bias;

  static AdamState for_network(const Mlp& net, double learning_rate = 1e-3);
};

// Throws TrainingError (leaving `net` untouched) when a gradient is not finite.
void optimize_step(Mlp& net, const Gradients& grads, AdamState& state);

// target <- tau * source + (1 - tau) * target
void polyak_update(Mlp& target, const Mlp& source, double tau);

// manifest.json (sizes, head, step, seed) + params.bin (little-endian f64).
void save_checkpoint(const Mlp& net, long step, const std::filesystem::path& dir);
Mlp load_checkpoint(const std::filesystem::path& dir, long* step = nullptr);

}  // namespace optistack::nn
