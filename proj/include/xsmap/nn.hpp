#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xsmap/common.hpp"

namespace xsmap::nn {

enum class Activation { Identity, Relu };
enum class Mode { Train, Infer };

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::Identity;
  bool batch_norm = false;
};

struct BatchNorm {
  Eigen::VectorXd scale, shift;        // learned
  Eigen::VectorXd run_mean, run_var;   // inference statistics
  double momentum = 0.9;
  double epsilon = 1e-5;
};

struct Layer {
  Eigen::MatrixXd weight;  // in x out
  Eigen::VectorXd bias;    // out
  Activation act = Activation::Identity;
  std::optional<BatchNorm> bn;
};

// Per-layer intermediates kept by a train-mode forward pass.
struct LayerCache {
  Eigen::MatrixXd input;       // B x in
  Eigen::MatrixXd affine;      // B x out, pre batch-norm
  Eigen::MatrixXd normalized;  // x-hat, only with batch norm
  Eigen::VectorXd batch_mean, batch_var, inv_std;
  Eigen::MatrixXd pre_act;     // input of the activation
  Eigen::MatrixXd output;
};

class Mlp;

struct Cache {
  const Mlp* owner = nullptr;
  Mode mode = Mode::Train;
  std::vector<LayerCache> layers;
};

// Dense multilayer perceptron with explicit forward/backward passes.
// Parameters are packed into one flat vector (per layer: weight column-major,
// bias, then batch-norm scale and shift) for the optimizer and checkpoints.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<LayerSpec> specs, Rng& rng);

  int input_dim() const;
  int output_dim() const;
  Eigen::Index param_count() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }

  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& flat);

  // Train mode normalizes with batch statistics and updates the running
  // averages; infer mode is a pure function of the stored statistics.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& batch, Mode mode, Cache* cache = nullptr);

  // Infer-mode forward on a const model.
  Eigen::MatrixXd infer(const Eigen::MatrixXd& batch) const;

  // Gradient of (downstream loss) w.r.t. the flat parameter vector given the
  // gradient at the output; optionally also w.r.t. the input batch.
  Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& grad_output,
                           Eigen::MatrixXd* grad_input = nullptr) const;

 private:
  std::vector<LayerSpec> specs_;
  std::vector<Layer> layers_;
};

// Glorot-uniform weights, zero biases, unit batch-norm scale.
void init_params(Mlp& mlp, Rng& rng);

// Adadelta with the accumulator recurrences scaled by an explicit
// per-epoch-decayed learning rate.
struct Adadelta {
  double rho = 0.95;
  double epsilon = 1e-6;
  double learning_rate = 0.125;  // lambda_i
  double decay = 0.99;           // gamma

  Eigen::VectorXd acc_grad_sq;  // E[g^2]
  Eigen::VectorXd acc_step_sq;  // E[dx^2]

  Adadelta() = default;
  Adadelta(Eigen::Index n, double lr1, double gamma);

  // E[g^2] <- rho E[g^2] + (1-rho) g^2
  // step   = -lr * sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps) * g
  // E[dx^2]<- rho E[dx^2] + (1-rho) step^2
  // Rejects non-finite gradients without touching any state.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

  // lambda_{i+1} = gamma * lambda_i, once per epoch.
  void end_epoch() { learning_rate *= decay; }
};

// Mean softmax cross-entropy over the batch; labels are 1-based.
struct XentResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_logits;  // d loss / d logits
};
XentResult softmax_xent(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

// Central-difference gradient check. The closure must be a deterministic
// function of the parameter vector; two baseline evaluations are compared to
// detect violations. Returns the worst relative error
// |g_an - g_fd| / max(1, |g_an|, |g_fd|).
double grad_check(const std::function<double(const Eigen::VectorXd&)>& loss_at,
                  const Eigen::VectorXd& params, const Eigen::VectorXd& analytic_grad,
                  double h);

// Mlp checkpoint block, embeddable in larger containers.
void write_mlp(BinaryWriter& w, const Mlp& mlp);
Mlp read_mlp(BinaryReader& r);

// Optimizer state block, for checkpoints that resume training.
void write_adadelta(BinaryWriter& w, const Adadelta& opt);
Adadelta read_adadelta(BinaryReader& r);

}  // namespace xsmap::nn
