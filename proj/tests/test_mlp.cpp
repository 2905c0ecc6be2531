#include <doctest.h>

#include <filesystem>
#include <random>

#include "optistack/errors.hpp"
#include "optistack/mlp.hpp"
#include "oracles.hpp"

using namespace optistack;
using nn::Mlp;
using nn::OutputHead;

namespace {

// Scalar loss: sum of output .* weights, so d loss / d output = weights.
double probe_loss(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return net.forward(x).cwiseProduct(w).sum();
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

}  // namespace

TEST_CASE("forward basics") {
  Mlp net({3, 4, 2}, OutputHead::Identity, 1);
  for (auto& l : net.layers()) l.weights.setZero();
  net.layers().back().bias << 0.3, -0.7;
  const Eigen::VectorXd y = net.forward_one(Eigen::VectorXd::Random(3));
  CHECK(y(0) == 0.3);
  CHECK(y(1) == -0.7);

  Mlp linear({3, 3}, OutputHead::Identity, 1);
  linear.layers()[0].weights.setIdentity();
  linear.layers()[0].bias.setZero();
  const Eigen::VectorXd x = Eigen::VectorXd::Random(3);
  CHECK((linear.forward_one(x) - x).norm() == 0.0);

  Mlp squash({4, 8, 8, 3}, OutputHead::Sigmoid, 9);
  const Eigen::MatrixXd out = squash.forward(Eigen::MatrixXd::Random(4, 50) * 100.0);
  CHECK(out.minCoeff() >= 0.0);
  CHECK(out.maxCoeff() <= 1.0);

  CHECK_THROWS_AS(squash.forward(Eigen::MatrixXd::Zero(5, 1)), UsageError);
  CHECK(Mlp({4, 8, 3}, OutputHead::Identity, 5).flatten() == Mlp({4, 8, 3}, OutputHead::Identity, 5).flatten());
}

TEST_CASE("linear network input gradient is W^T g") {
  Mlp net({3, 2}, OutputHead::Identity, 4);
  nn::ForwardCache cache;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 1);
  net.forward(x, &cache);
  Eigen::MatrixXd g(2, 1);
  g << 0.5, -1.5;
  const auto grads = net.backward(cache, g);
  CHECK((grads.input - net.layers()[0].weights.transpose() * g).norm() < 1e-15);

  const auto zero = net.backward(cache, Eigen::MatrixXd::Zero(2, 1));
  CHECK(zero.weights[0].norm() == 0.0);
  CHECK(zero.bias[0].norm() == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> width(1, 32);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int in = width(rng) % 6 + 1;
    const int out = width(rng) % 5 + 1;
    const auto head = trial % 2 ? OutputHead::Sigmoid : OutputHead::Identity;
    Mlp net({in, width(rng), width(rng), out}, head, 100 + static_cast<std::uint64_t>(trial));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(in, 3);
    const Eigen::MatrixXd w = Eigen::MatrixXd::Random(out, 3);

    nn::ForwardCache cache;
    net.forward(x, &cache);
    const auto grads = net.backward(cache, w);

    auto params = net.flatten();
    std::vector<double> analytic;
    for (std::size_t l = 0; l < grads.weights.size(); ++l) {
      for (Eigen::Index r = 0; r < grads.weights[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < grads.weights[l].cols(); ++c) analytic.push_back(grads.weights[l](r, c));
      }
      for (Eigen::Index r = 0; r < grads.bias[l].size(); ++r) analytic.push_back(grads.bias[l](r));
    }
    REQUIRE(analytic.size() == params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      Mlp probe = net;
      const double base = params[p];
      const double numeric = oracle::central_difference(
          [&](double v) {
            auto q = params;
            q[p] = v;
            probe.assign(q);
            return probe_loss(probe, x, w);
          },
          base, 1e-5);
      if (std::abs(numeric) < 1e-7 && std::abs(analytic[p]) < 1e-7) continue;
      const double err = rel_error(numeric, analytic[p]);
      worst = std::max(worst, err);
      CHECK(err < 1e-4);
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double numeric = oracle::central_difference(
            [&](double v) {
              Eigen::MatrixXd xx = x;
              xx(r, c) = v;
              return probe_loss(net, xx, w);
            },
            x(r, c), 1e-5);
        if (std::abs(numeric) < 1e-7 && std::abs(grads.input(r, c)) < 1e-7) continue;
        CHECK(rel_error(numeric, grads.input(r, c)) < 1e-4);
      }
    }
  }
  MESSAGE("worst relative gradient error: " << worst);
}

TEST_CASE("adam step") {
  Mlp net({1, 1}, OutputHead::Identity, 3);
  auto state = nn::AdamState::for_network(net, 1e-3);
  const auto before = net.flatten();

  nn::Gradients zero{{Eigen::MatrixXd::Zero(1, 1)}, {Eigen::VectorXd::Zero(1)}, {}};
  nn::optimize_step(net, zero, state);
  CHECK(net.flatten() == before);
  CHECK(state.step == 1);

  nn::Gradients pos{{Eigen::MatrixXd::Constant(1, 1, 0.8)}, {Eigen::VectorXd::Zero(1)}, {}};
  nn::optimize_step(net, pos, state);
  CHECK(net.flatten()[0] < before[0]);

  Mlp a({3, 4, 2}, OutputHead::Identity, 8), b = a;
  auto sa = nn::AdamState::for_network(a), sb = nn::AdamState::for_network(b);
  nn::ForwardCache ca, cb;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  a.forward(x, &ca);
  b.forward(x, &cb);
  const Eigen::MatrixXd g = Eigen::MatrixXd::Random(2, 4);
  nn::optimize_step(a, a.backward(ca, g), sa);
  nn::optimize_step(b, b.backward(cb, g), sb);
  CHECK(a.flatten() == b.flatten());

  nn::Gradients bad{{Eigen::MatrixXd::Constant(1, 1, std::nan(""))}, {Eigen::VectorXd::Zero(1)}, {}};
  const auto kept = net.flatten();
  CHECK_THROWS_AS(nn::optimize_step(net, bad, state), TrainingError);
  CHECK(net.flatten() == kept);
}

TEST_CASE("polyak averaging") {
  Mlp src({2, 3, 1}, OutputHead::Identity, 1), dst({2, 3, 1}, OutputHead::Identity, 2);
  const auto d0 = dst.flatten();
  Mlp copy = dst;
  nn::polyak_update(copy, src, 0.0);
  CHECK(copy.flatten() == d0);
  nn::polyak_update(copy, src, 1.0);
  CHECK(copy.flatten() == src.flatten());

  Mlp s1({1, 1}, OutputHead::Identity, 1), t1 = s1;
  s1.assign(std::vector<double>{2.0, 0.0});
  t1.assign(std::vector<double>{1.0, 0.0});
  nn::polyak_update(t1, s1, 0.01);
  CHECK(t1.flatten()[0] == doctest::Approx(1.01).epsilon(1e-15));
  CHECK(s1.flatten()[0] == 2.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = std::filesystem::temp_directory_path() / "optistack_test_ckpt";
  std::filesystem::remove_all(dir);
  Mlp net({5, 7, 3}, OutputHead::Sigmoid, 77);
  net.layers()[0].weights(0, 0) = -0.0;
  net.layers()[1].bias(2) = 1e-310;
  nn::save_checkpoint(net, 42, dir);
  CHECK(std::filesystem::file_size(dir / "params.bin") == net.parameter_count() * 8);
  long step = 0;
  const auto back = nn::load_checkpoint(dir, &step);
  CHECK(step == 42);
  CHECK(back.sizes() == net.sizes());
  CHECK(back.head() == OutputHead::Sigmoid);
  const auto a = net.flatten(), b = back.flatten();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);
  std::filesystem::remove_all(dir);
}
