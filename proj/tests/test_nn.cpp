#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "xsmap/nn.hpp"

using namespace xsmap;
using nn::Activation;
using nn::Mode;

namespace {

Eigen::VectorXd pack_identity_layer(int d) {
  // weight (column-major identity) followed by the zero bias
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd flat(d * d + d);
  flat << Eigen::Map<Eigen::VectorXd>(w.data(), d * d), Eigen::VectorXd::Zero(d);
  return flat;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("relu layer with identity weights") {
  Rng rng(1);
  nn::Mlp mlp({{2, 2, Activation::Relu, false}}, rng);
  mlp.set_params(pack_identity_layer(2));
  Eigen::MatrixXd x(1, 2);
  x << -1.0, 2.0;
  const Eigen::MatrixXd y = mlp.forward(x, Mode::Infer);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == 2.0);
}

TEST_CASE("zero parameters give zero output") {
  Rng rng(2);
  nn::Mlp mlp({{3, 4, Activation::Relu, false}, {4, 2, Activation::Identity, false}}, rng);
  mlp.set_params(Eigen::VectorXd::Zero(mlp.param_count()));
  const Eigen::MatrixXd y = mlp.forward(rng.normal_matrix(5, 3), Mode::Infer);
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("batch norm standardizes train-mode pre-activations") {
  Rng rng(3);
  nn::Mlp mlp({{4, 4, Activation::Identity, true}}, rng);
  Eigen::VectorXd p(4 * 4 + 4 + 4 + 4);
  Eigen::MatrixXd w = Eigen::MatrixXd::Identity(4, 4);
  p << Eigen::Map<Eigen::VectorXd>(w.data(), 16), Eigen::VectorXd::Zero(4),
      Eigen::VectorXd::Ones(4), Eigen::VectorXd::Zero(4);
  mlp.set_params(p);
  Eigen::MatrixXd x = rng.normal_matrix(64, 4);
  x.col(1).array() += 5.0;   // shift one feature
  x.col(2).array() *= 3.0;   // scale another
  const Eigen::MatrixXd y = mlp.forward(x, Mode::Train);
  const Eigen::VectorXd mean = y.colwise().mean();
  const Eigen::VectorXd var =
      (y.rowwise() - mean.transpose()).array().square().colwise().mean();
  for (int j = 0; j < 4; ++j) {
    CHECK(std::abs(mean(j)) < 1e-12);
    CHECK(var(j) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batch norm rejects singleton train batches") {
  Rng rng(4);
  nn::Mlp mlp({{2, 2, Activation::Identity, true}}, rng);
  CHECK_THROWS_AS(mlp.forward(Eigen::MatrixXd::Zero(1, 2), Mode::Train), DataError);
}

TEST_CASE("linear layer gradient equals summed outer products") {
  Rng rng(5);
  nn::Mlp mlp({{3, 2, Activation::Identity, false}}, rng);
  const Eigen::MatrixXd x = rng.normal_matrix(4, 3);
  nn::Cache cache;
  mlp.forward(x, Mode::Train, &cache);
  // loss = sum(y) -> output gradient of ones
  const Eigen::VectorXd grad = mlp.backward(cache, Eigen::MatrixXd::Ones(4, 2));
  const Eigen::MatrixXd dw_expected = x.transpose() * Eigen::MatrixXd::Ones(4, 2);
  const Eigen::Map<const Eigen::MatrixXd> dw(grad.data(), 3, 2);
  CHECK((dw - dw_expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(grad.segment(6, 2).isApprox(Eigen::VectorXd::Constant(2, 4.0)));
}

TEST_CASE("finite differences confirm MLP gradients without batch norm") {
  Rng rng(6);
  nn::Mlp mlp({{3, 4, Activation::Relu, false}, {4, 2, Activation::Identity, false}}, rng);
  const Eigen::MatrixXd x = rng.normal_matrix(5, 3);
  auto loss_at = [&](const Eigen::VectorXd& p) {
    nn::Mlp probe = mlp;
    probe.set_params(p);
    const Eigen::MatrixXd y = probe.forward(x, Mode::Train);
    return 0.5 * y.squaredNorm();
  };
  nn::Cache cache;
  const Eigen::MatrixXd y = mlp.forward(x, Mode::Train, &cache);
  const Eigen::VectorXd analytic = mlp.backward(cache, y);
  CHECK(nn::grad_check(loss_at, mlp.params(), analytic, 1e-5) < 1e-6);
}

TEST_CASE("finite differences confirm MLP gradients with batch norm") {
  Rng rng(7);
  nn::Mlp mlp({{3, 4, Activation::Relu, true}, {4, 2, Activation::Identity, false}}, rng);
  const Eigen::MatrixXd x = rng.normal_matrix(6, 3);
  auto loss_at = [&](const Eigen::VectorXd& p) {
    nn::Mlp probe = mlp;
    probe.set_params(p);
    const Eigen::MatrixXd y = probe.forward(x, Mode::Train);
    return 0.5 * y.squaredNorm();
  };
  nn::Cache cache;
  const Eigen::MatrixXd y = mlp.forward(x, Mode::Train, &cache);
  const Eigen::VectorXd analytic = mlp.backward(cache, y);
  CHECK(nn::grad_check(loss_at, mlp.params(), analytic, 1e-5) < 1e-5);
}

TEST_CASE("softmax cross-entropy gradient agrees with finite differences") {
  Rng rng(8);
  const Eigen::MatrixXd logits = rng.normal_matrix(4, 3);
  const std::vector<int> labels = {1, 3, 2, 3};
  auto loss_at = [&](const Eigen::VectorXd& p) {
    Eigen::MatrixXd l = Eigen::Map<const Eigen::MatrixXd>(p.data(), 4, 3);
    return nn::softmax_xent(l, labels).loss;
  };
  const nn::XentResult res = nn::softmax_xent(logits, labels);
  const Eigen::VectorXd flat_logits = Eigen::Map<const Eigen::VectorXd>(logits.data(), 12);
  const Eigen::VectorXd flat_grad =
      Eigen::Map<const Eigen::VectorXd>(res.grad_logits.data(), 12);
  CHECK(nn::grad_check(loss_at, flat_logits, flat_grad, 1e-6) < 1e-8);
}

TEST_CASE("adadelta hand-computed first step") {
  nn::Adadelta opt(1, 1.0, 1.0);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  opt.step(p, Eigen::VectorXd::Ones(1));
  CHECK(p(0) == doctest::Approx(-0.004472).epsilon(1e-4));
}

TEST_CASE("adadelta recurrences hold literally") {
  Rng rng(9);
  nn::Adadelta opt(4, 0.5, 0.99);
  Eigen::VectorXd p = rng.normal_matrix(4, 1);
  Eigen::VectorXd eg2 = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd ex2 = Eigen::VectorXd::Zero(4);
  for (int step = 0; step < 5; ++step) {
    const Eigen::VectorXd g = rng.normal_matrix(4, 1);
    const Eigen::VectorXd p_before = p;
    opt.step(p, g);
    eg2 = 0.95 * eg2.array() + 0.05 * g.array().square();
    const Eigen::ArrayXd delta =
        -opt.learning_rate * ((ex2.array() + 1e-6).sqrt() / (eg2.array() + 1e-6).sqrt()) *
        g.array();
    ex2 = 0.95 * ex2.array() + 0.05 * delta.square();
    CHECK((p - (p_before + delta.matrix())).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((opt.acc_grad_sq - eg2).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((opt.acc_step_sq - ex2).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(p.allFinite());
  }
}

TEST_CASE("adadelta ignores gradients when the learning rate is zero") {
  nn::Adadelta opt(3, 0.0, 0.99);
  Eigen::VectorXd p(3);
  p << 1.0, -2.0, 3.0;
  const Eigen::VectorXd before = p;
  opt.step(p, Eigen::VectorXd::Constant(3, 42.0));
  CHECK(p == before);
}

TEST_CASE("adadelta zero gradient decays accumulators and keeps parameters") {
  nn::Adadelta opt(1, 1.0, 0.99);
  Eigen::VectorXd p = Eigen::VectorXd::Ones(1);
  opt.step(p, Eigen::VectorXd::Ones(1));
  const double eg2 = opt.acc_grad_sq(0);
  const double ex2 = opt.acc_step_sq(0);
  const Eigen::VectorXd before = p;
  opt.step(p, Eigen::VectorXd::Zero(1));
  CHECK(p == before);
  CHECK(opt.acc_grad_sq(0) == doctest::Approx(0.95 * eg2).epsilon(1e-14));
  CHECK(opt.acc_step_sq(0) == doctest::Approx(0.95 * ex2).epsilon(1e-14));
}

TEST_CASE("adadelta rejects non-finite gradients") {
  nn::Adadelta opt(2, 1.0, 0.99);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(p, g), NumericError);
  CHECK(p == Eigen::VectorXd::Zero(2));
  CHECK(opt.acc_grad_sq == Eigen::VectorXd::Zero(2));
}

TEST_CASE("learning-rate schedule") {
  nn::Adadelta opt(1, 0.125, 0.99);
  opt.end_epoch();
  CHECK(opt.learning_rate == doctest::Approx(0.12375).epsilon(1e-12));
  for (int i = 0; i < 8; ++i) opt.end_epoch();
  CHECK(opt.learning_rate == doctest::Approx(0.125 * std::pow(0.99, 9)).epsilon(1e-12));

  nn::Adadelta flat(1, 0.125, 1.0);
  flat.end_epoch();
  CHECK(flat.learning_rate == 0.125);
}

TEST_CASE("grad_check on an explicit quadratic") {
  Eigen::VectorXd p(2);
  p << 3.0, -4.0;
  auto loss_at = [](const Eigen::VectorXd& q) { return 0.5 * q.squaredNorm(); };
  CHECK(nn::grad_check(loss_at, p, p, 1e-5) < 1e-9);
}

TEST_CASE("grad_check rejects non-deterministic closures") {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
  int calls = 0;
  auto noisy = [&calls](const Eigen::VectorXd&) { return static_cast<double>(calls++); };
  CHECK_THROWS_AS(nn::grad_check(noisy, p, p, 1e-5), NumericError);
}

TEST_CASE("infer mode is a pure function of running statistics") {
  Rng rng(10);
  nn::Mlp mlp({{3, 3, Activation::Relu, true}}, rng);
  mlp.forward(rng.normal_matrix(16, 3), Mode::Train);  // populate running stats
  const Eigen::MatrixXd x = rng.normal_matrix(4, 3);
  const Eigen::MatrixXd y1 = mlp.infer(x);
  const Eigen::MatrixXd y2 = mlp.infer(x);
  CHECK(y1 == y2);
}

TEST_CASE("optimizer state round trip") {
  Rng rng(13);
  nn::Adadelta opt(5, 0.125, 0.99);
  Eigen::VectorXd p = rng.normal_matrix(5, 1);
  for (int i = 0; i < 3; ++i) {
    opt.step(p, rng.normal_matrix(5, 1));
    opt.end_epoch();
  }
  const std::string path =
      (std::filesystem::temp_directory_path() / "xsmap_adadelta_rt.bin").string();
  {
    BinaryWriter w(path);
    nn::write_adadelta(w, opt);
    w.close();
  }
  BinaryReader r(path);
  const nn::Adadelta back = nn::read_adadelta(r);
  CHECK(back.learning_rate == opt.learning_rate);
  CHECK(back.rho == opt.rho);
  CHECK(back.acc_grad_sq == opt.acc_grad_sq);
  CHECK(back.acc_step_sq == opt.acc_step_sq);
  // Both continue identically.
  nn::Adadelta a = opt, b = back;
  Eigen::VectorXd pa = p, pb = p;
  const Eigen::VectorXd g = rng.normal_matrix(5, 1);
  a.step(pa, g);
  b.step(pb, g);
  CHECK(pa == pb);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint block round trip") {
  Rng rng(11);
  nn::Mlp mlp({{3, 5, Activation::Relu, true}, {5, 2, Activation::Identity, false}}, rng);
  mlp.forward(rng.normal_matrix(8, 3), Mode::Train);
  const std::string path =
      (std::filesystem::temp_directory_path() / "xsmap_mlp_rt.bin").string();
  {
    BinaryWriter w(path);
    nn::write_mlp(w, mlp);
    w.close();
  }
  BinaryReader r(path);
  const nn::Mlp back = nn::read_mlp(r);
  CHECK(back.params() == mlp.params());
  CHECK(back.layers()[0].bn->run_mean == mlp.layers()[0].bn->run_mean);
  CHECK(back.layers()[0].bn->run_var == mlp.layers()[0].bn->run_var);
  const Eigen::MatrixXd probe = Rng(12).normal_matrix(3, 3);
  CHECK(back.infer(probe) == mlp.infer(probe));
  std::remove(path.c_str());
}

}  // TEST_SUITE
