#include "xsmap/nn.hpp"

#include <cmath>

namespace xsmap::nn {

Mlp::Mlp(std::vector<LayerSpec> specs, Rng& rng) : specs_(std::move(specs)) {
  if (specs_.empty()) throw ConfigError("Mlp: at least one layer required");
  for (size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& s = specs_[i];
    if (s.in < 1 || s.out < 1) throw ConfigError("Mlp: layer dimensions must be positive");
    if (i > 0 && specs_[i - 1].out != s.in)
      throw ConfigError("Mlp: layer " + std::to_string(i) + " expects input " +
                        std::to_string(s.in) + " but previous layer outputs " +
                        std::to_string(specs_[i - 1].out));
    Layer layer;
    layer.weight.resize(s.in, s.out);
    layer.bias = Eigen::VectorXd::Zero(s.out);
    layer.act = s.act;
    if (s.batch_norm) {
      BatchNorm bn;
      bn.scale = Eigen::VectorXd::Ones(s.out);
      bn.shift = Eigen::VectorXd::Zero(s.out);
      bn.run_mean = Eigen::VectorXd::Zero(s.out);
      bn.run_var = Eigen::VectorXd::Ones(s.out);
      layer.bn = bn;
    }
    layers_.push_back(std::move(layer));
  }
  init_params(*this, rng);
}

int Mlp::input_dim() const { return specs_.empty() ? 0 : specs_.front().in; }
int Mlp::output_dim() const { return specs_.empty() ? 0 : specs_.back().out; }

Eigen::Index Mlp::param_count() const {
  Eigen::Index n = 0;
  for (const Layer& l : layers_) {
    n += l.weight.size() + l.bias.size();
    if (l.bn) n += l.bn->scale.size() + l.bn->shift.size();
  }
  return n;
}

Eigen::VectorXd Mlp::params() const {
  Eigen::VectorXd flat(param_count());
  Eigen::Index at = 0;
  for (const Layer& l : layers_) {
    flat.segment(at, l.weight.size()) =
        Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
    if (l.bn) {
      flat.segment(at, l.bn->scale.size()) = l.bn->scale;
      at += l.bn->scale.size();
      flat.segment(at, l.bn->shift.size()) = l.bn->shift;
      at += l.bn->shift.size();
    }
  }
  return flat;
}

void Mlp::set_params(const Eigen::VectorXd& flat) {
  if (flat.size() != param_count())
    throw DataError("Mlp::set_params: expected " + std::to_string(param_count()) +
                    " values, got " + std::to_string(flat.size()));
  Eigen::Index at = 0;
  for (Layer& l : layers_) {
    Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) =
        flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
    if (l.bn) {
      l.bn->scale = flat.segment(at, l.bn->scale.size());
      at += l.bn->scale.size();
      l.bn->shift = flat.segment(at, l.bn->shift.size());
      at += l.bn->shift.size();
    }
  }
}

namespace {

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& x, Activation act) {
  if (act == Activation::Relu) return x.cwiseMax(0.0);
  return x;
}

}  // namespace

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& batch, Mode mode, Cache* cache) {
  if (batch.cols() != input_dim())
    throw DataError("Mlp::forward: batch width " + std::to_string(batch.cols()) +
                    " does not match input dim " + std::to_string(input_dim()));
  if (cache) {
    cache->owner = this;
    cache->mode = mode;
    cache->layers.clear();
    cache->layers.resize(layers_.size());
  }
  const Eigen::Index b = batch.rows();
  Eigen::MatrixXd x = batch;
  for (size_t i = 0; i < layers_.size(); ++i) {
    Layer& layer = layers_[i];
    Eigen::MatrixXd z = (x * layer.weight).rowwise() + layer.bias.transpose();
    Eigen::MatrixXd pre_act;
    LayerCache lc;
    if (layer.bn) {
      BatchNorm& bn = *layer.bn;
      if (mode == Mode::Train) {
        if (b < 2)
          throw DataError("Mlp::forward: batch norm needs batch size >= 2 in train mode");
        const Eigen::VectorXd mean = z.colwise().mean();
        Eigen::MatrixXd centered = z.rowwise() - mean.transpose();
        const Eigen::VectorXd var = centered.array().square().colwise().mean();
        const Eigen::VectorXd inv_std = (var.array() + bn.epsilon).rsqrt();
        Eigen::MatrixXd xhat = centered.array().rowwise() * inv_std.transpose().array();
        pre_act = (xhat.array().rowwise() * bn.scale.transpose().array()).rowwise() +
                  bn.shift.transpose().array();
        bn.run_mean = bn.momentum * bn.run_mean + (1.0 - bn.momentum) * mean;
        bn.run_var = bn.momentum * bn.run_var + (1.0 - bn.momentum) * var;
        if (cache) {
          lc.batch_mean = mean;
          lc.batch_var = var;
          lc.inv_std = inv_std;
          lc.normalized = xhat;
        }
      } else {
        const Eigen::VectorXd inv_std = (bn.run_var.array() + bn.epsilon).rsqrt();
        Eigen::MatrixXd xhat =
            (z.rowwise() - bn.run_mean.transpose()).array().rowwise() *
            inv_std.transpose().array();
        pre_act = (xhat.array().rowwise() * bn.scale.transpose().array()).rowwise() +
                  bn.shift.transpose().array();
      }
    } else {
      pre_act = z;
    }
    Eigen::MatrixXd out = apply_activation(pre_act, layer.act);
    if (cache) {
      lc.input = x;
      lc.affine = std::move(z);
      lc.pre_act = pre_act;
      lc.output = out;
      cache->layers[i] = std::move(lc);
    }
    x = std::move(out);
  }
  return x;
}

Eigen::MatrixXd Mlp::infer(const Eigen::MatrixXd& batch) const {
  // Infer mode never mutates running statistics.
  return const_cast<Mlp*>(this)->forward(batch, Mode::Infer, nullptr);
}

Eigen::VectorXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad_output,
                              Eigen::MatrixXd* grad_input) const {
  if (cache.owner != this) throw DataError("Mlp::backward: cache from a different model");
  if (cache.mode != Mode::Train) throw DataError("Mlp::backward: needs a train-mode cache");
  if (cache.layers.size() != layers_.size())
    throw DataError("Mlp::backward: stale cache (layer count mismatch)");
  if (grad_output.cols() != output_dim())
    throw DataError("Mlp::backward: gradient width " + std::to_string(grad_output.cols()) +
                    " does not match output dim " + std::to_string(output_dim()));

  Eigen::VectorXd flat = Eigen::VectorXd::Zero(param_count());
  // Offsets of each layer's parameter block in the flat vector.
  std::vector<Eigen::Index> offsets(layers_.size());
  {
    Eigen::Index at = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
      offsets[i] = at;
      at += layers_[i].weight.size() + layers_[i].bias.size();
      if (layers_[i].bn) at += layers_[i].bn->scale.size() + layers_[i].bn->shift.size();
    }
  }

  Eigen::MatrixXd grad = grad_output;
  for (size_t ii = layers_.size(); ii-- > 0;) {
    const Layer& layer = layers_[ii];
    const LayerCache& lc = cache.layers[ii];
    if (lc.input.rows() != grad.rows())
      throw DataError("Mlp::backward: cache batch size does not match gradient");
    const Eigen::Index b = grad.rows();

    if (layer.act == Activation::Relu)
      grad = (lc.pre_act.array() > 0.0).select(grad, Eigen::MatrixXd::Zero(b, grad.cols()));

    Eigen::MatrixXd grad_affine;
    Eigen::Index at = offsets[ii];
    const Eigen::Index w_size = layer.weight.size();
    const Eigen::Index b_size = layer.bias.size();
    if (layer.bn) {
      const BatchNorm& bn = *layer.bn;
      const Eigen::VectorXd dscale = (grad.array() * lc.normalized.array()).colwise().sum();
      const Eigen::VectorXd dshift = grad.colwise().sum();
      // d loss / d xhat
      Eigen::MatrixXd gxhat = grad.array().rowwise() * bn.scale.transpose().array();
      Eigen::MatrixXd centered = lc.affine.rowwise() - lc.batch_mean.transpose();
      const Eigen::ArrayXd inv_std = lc.inv_std.array();
      const Eigen::VectorXd dvar =
          ((gxhat.array() * centered.array()).colwise().sum().transpose().array() * -0.5 *
           inv_std.pow(3))
              .matrix();
      const Eigen::VectorXd dmean =
          (gxhat.colwise().sum().transpose().array() * -inv_std +
           dvar.array() * (-2.0 / b) * centered.colwise().sum().transpose().array())
              .matrix();
      grad_affine = (gxhat.array().rowwise() * inv_std.transpose()).matrix() +
                    (centered.array().rowwise() * (dvar.transpose().array() * (2.0 / b))).matrix();
      grad_affine.rowwise() += (dmean / static_cast<double>(b)).transpose();
      flat.segment(at + w_size + b_size, dscale.size()) = dscale;
      flat.segment(at + w_size + b_size + dscale.size(), dshift.size()) = dshift;
    } else {
      grad_affine = std::move(grad);
    }

    const Eigen::MatrixXd dw = lc.input.transpose() * grad_affine;
    const Eigen::VectorXd db = grad_affine.colwise().sum();
    flat.segment(at, w_size) = Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
    flat.segment(at + w_size, b_size) = db;

    if (ii > 0 || grad_input) grad = grad_affine * layer.weight.transpose();
  }
  if (grad_input) *grad_input = grad;
  return flat;
}

void init_params(Mlp& mlp, Rng& rng) {
  for (Layer& l : mlp.layers()) {
    const double limit = std::sqrt(6.0 / (l.weight.rows() + l.weight.cols()));
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
        l.weight(i, j) = limit * (2.0 * rng.uniform() - 1.0);
    l.bias.setZero();
    if (l.bn) {
      l.bn->scale.setOnes();
      l.bn->shift.setZero();
      l.bn->run_mean.setZero();
      l.bn->run_var.setOnes();
    }
  }
}

Adadelta::Adadelta(Eigen::Index n, double lr1, double gamma)
    : learning_rate(lr1), decay(gamma) {
  if (n < 1) throw ConfigError("Adadelta: parameter count must be positive");
  if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("Adadelta: decay must be in (0,1]");
  acc_grad_sq = Eigen::VectorXd::Zero(n);
  acc_step_sq = Eigen::VectorXd::Zero(n);
}

void Adadelta::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (params.size() != acc_grad_sq.size() || grad.size() != acc_grad_sq.size())
    throw DataError("Adadelta::step: parameter/gradient size mismatch");
  if (!grad.allFinite())
    throw NumericError("Adadelta::step: non-finite gradient, step rejected");
  acc_grad_sq = rho * acc_grad_sq.array() + (1.0 - rho) * grad.array().square();
  const Eigen::ArrayXd step_size =
      -learning_rate * ((acc_step_sq.array() + epsilon).sqrt() /
                        (acc_grad_sq.array() + epsilon).sqrt());
  const Eigen::VectorXd delta = (step_size * grad.array()).matrix();
  acc_step_sq = rho * acc_step_sq.array() + (1.0 - rho) * delta.array().square();
  params += delta;
}

XentResult softmax_xent(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index k = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != b)
    throw DataError("softmax_xent: label count does not match batch size");
  XentResult res;
  res.grad_logits.resize(b, k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 1 || y > k)
      throw DataError("softmax_xent: label " + std::to_string(y) + " outside 1.." +
                      std::to_string(k));
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).transpose().array() - m;
    const Eigen::ArrayXd exps = shifted.exp();
    const double z = exps.sum();
    total -= shifted(y - 1) - std::log(z);
    res.grad_logits.row(i) = (exps / z).matrix().transpose();
    res.grad_logits(i, y - 1) -= 1.0;
  }
  res.loss = total / static_cast<double>(b);
  res.grad_logits /= static_cast<double>(b);
  return res;
}

double grad_check(const std::function<double(const Eigen::VectorXd&)>& loss_at,
                  const Eigen::VectorXd& params, const Eigen::VectorXd& analytic_grad,
                  double h) {
  if (params.size() != analytic_grad.size())
    throw DataError("grad_check: parameter/gradient size mismatch");
  if (!(h > 0.0)) throw ConfigError("grad_check: step h must be positive");
  const double base1 = loss_at(params);
  const double base2 = loss_at(params);
  if (base1 != base2)
    throw NumericError("grad_check: loss closure is not deterministic");
  double worst = 0.0;
  Eigen::VectorXd p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p(i) = params(i) + h;
    const double up = loss_at(p);
    p(i) = params(i) - h;
    const double down = loss_at(p);
    p(i) = params(i);
    const double fd = (up - down) / (2.0 * h);
    const double an = analytic_grad(i);
    const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
    worst = std::max(worst, rel);
  }
  return worst;
}

void write_mlp(BinaryWriter& w, const Mlp& mlp) {
  w.u32(static_cast<uint32_t>(mlp.specs().size()));
  for (const LayerSpec& s : mlp.specs()) {
    w.u32(static_cast<uint32_t>(s.in));
    w.u32(static_cast<uint32_t>(s.out));
    w.u8(s.act == Activation::Relu ? 1 : 0);
    w.u8(s.batch_norm ? 1 : 0);
  }
  const Eigen::VectorXd flat = mlp.params();
  w.u64(static_cast<uint64_t>(flat.size()));
  w.f64_array(flat.data(), static_cast<size_t>(flat.size()));
  for (const Layer& l : mlp.layers()) {
    if (!l.bn) continue;
    w.f64(l.bn->momentum);
    w.f64(l.bn->epsilon);
    w.f64_array(l.bn->run_mean.data(), static_cast<size_t>(l.bn->run_mean.size()));
    w.f64_array(l.bn->run_var.data(), static_cast<size_t>(l.bn->run_var.size()));
  }
}

void write_adadelta(BinaryWriter& w, const Adadelta& opt) {
  w.f64(opt.rho);
  w.f64(opt.epsilon);
  w.f64(opt.learning_rate);
  w.f64(opt.decay);
  w.u64(static_cast<uint64_t>(opt.acc_grad_sq.size()));
  w.f64_array(opt.acc_grad_sq.data(), static_cast<size_t>(opt.acc_grad_sq.size()));
  w.f64_array(opt.acc_step_sq.data(), static_cast<size_t>(opt.acc_step_sq.size()));
}

Adadelta read_adadelta(BinaryReader& r) {
  Adadelta opt;
  opt.rho = r.f64("adadelta rho");
  opt.epsilon = r.f64("adadelta epsilon");
  opt.learning_rate = r.f64("adadelta learning_rate");
  opt.decay = r.f64("adadelta decay");
  const uint64_t n = r.u64("adadelta size");
  opt.acc_grad_sq.resize(static_cast<Eigen::Index>(n));
  opt.acc_step_sq.resize(static_cast<Eigen::Index>(n));
  r.f64_array(opt.acc_grad_sq.data(), n, "adadelta acc_grad_sq");
  r.f64_array(opt.acc_step_sq.data(), n, "adadelta acc_step_sq");
  return opt;
}

Mlp read_mlp(BinaryReader& r) {
  const uint32_t n_layers = r.u32("mlp layer count");
  if (n_layers == 0) throw DataError("mlp checkpoint: field 'layer count' is zero");
  std::vector<LayerSpec> specs(n_layers);
  for (LayerSpec& s : specs) {
    s.in = static_cast<int>(r.u32("layer in"));
    s.out = static_cast<int>(r.u32("layer out"));
    s.act = r.u8("layer activation") ? Activation::Relu : Activation::Identity;
    s.batch_norm = r.u8("layer batch_norm") != 0;
  }
  Rng dummy(0);
  Mlp mlp(specs, dummy);
  const uint64_t count = r.u64("mlp param count");
  if (count != static_cast<uint64_t>(mlp.param_count()))
    throw DataError("mlp checkpoint: field 'param count' does not match layer specs");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  r.f64_array(flat.data(), count, "mlp params");
  mlp.set_params(flat);
  for (Layer& l : mlp.layers()) {
    if (!l.bn) continue;
    l.bn->momentum = r.f64("bn momentum");
    l.bn->epsilon = r.f64("bn epsilon");
    r.f64_array(l.bn->run_mean.data(), static_cast<size_t>(l.bn->run_mean.size()), "bn run_mean");
    r.f64_array(l.bn->run_var.data(), static_cast<size_t>(l.bn->run_var.size()), "bn run_var");
  }
  return mlp;
}

}  // namespace xsmap::nn
