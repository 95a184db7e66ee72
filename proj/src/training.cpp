// SPDX-License-Identifier: Apache-2.0
#include "stfcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "stfcn/errors.hpp"
#include "stfcn/lstm.hpp"
#include "stfcn/rng.hpp"

namespace stfcn {

std::string to_string(Supervision rule) { return rule == Supervision::all_labeled ? "all_labeled" : "last_frame"; }

Supervision supervision_from_string(const std::string& name) {
  if (name == "last_frame") return Supervision::last_frame;
  if (name == "all_labeled") return Supervision::all_labeled;
  throw ConfigError("unknown supervision rule '" + name + "' (expected last_frame or all_labeled)");
}

void OptimConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("momentum must satisfy 0 <= mu < 1, got " + std::to_string(momentum));
  }
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"lr", c.lr},
       {"momentum", c.momentum},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"supervision", to_string(c.supervision)},
       {"clip_norm", c.clip_norm},
       {"eval_every", c.eval_every},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  static const char* known[] = {"lr",        "momentum",  "iterations", "batch_size",      "seed",
                                "supervision", "clip_norm", "eval_every", "checkpoint_every"};
  if (!j.is_object()) throw ConfigError("optimizer config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ConfigError("unknown optimizer key '" + key + "'");
    }
  }
  try {
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("supervision")) c.supervision = supervision_from_string(j.at("supervision").get<std::string>());
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("optimizer config: ") + e.what());
  }
}

void sgd_momentum_step(std::span<const NamedParameter> params, double lr, double momentum) {
  for (const auto& np : params) {
    if (!np.trainable) continue;
    for (double g : np.param->grad.data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + np.name);
    }
  }
  for (const auto& np : params) {
    if (!np.trainable) continue;
    Parameter& p = *np.param;
    auto v = p.momentum.data();
    auto g = p.grad.data();
    auto x = p.value.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      x[i] -= lr * v[i];
    }
    p.zero_grad();
  }
}

double clip_grad_norm(std::span<const NamedParameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& np : params)
    if (np.trainable) sq += dot(np.param->grad, np.param->grad);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& np : params)
      if (np.trainable)
        for (double& g : np.param->grad.data()) g *= scale;
  }
  return norm;
}

std::vector<std::size_t> supervised_frames(const Window& window, Supervision rule) {
  const std::size_t T = window.labels.size();
  if (T == 0) return {};
  if (rule == Supervision::last_frame) return {T - 1};
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < T; ++t)
    if (window.labeled[t]) out.push_back(t);
  return out;
}

LossResult window_loss(Model& model, const Window& window, Supervision rule, int ignore_label) {
  const Tensor logits = model.forward_window(window.frames);
  const std::size_t T = logits.dim(0);
  if (rule == Supervision::all_labeled) return softmax_ce(logits, window.labels, ignore_label);

  LossResult last = softmax_ce(logits.slice0(T - 1), std::span(&window.labels[T - 1], 1), ignore_label);
  LossResult r;
  r.loss = last.loss;
  r.counted = last.counted;
  r.grad = Tensor(logits.shape());
  r.grad.assign0(T - 1, last.grad);
  return r;
}

namespace {

// Without the ST module frames never interact, so a last-frame objective only
// needs the last frame. This is the same computation with T - 1 fewer frames.
const Window& effective_window(const Model& model, const Window& w, Supervision rule, Window& scratch) {
  if (model.config().st_mode != StMode::off || rule != Supervision::last_frame || w.labels.size() <= 1) return w;
  const std::size_t T = w.labels.size();
  scratch.sequence_id = w.sequence_id;
  scratch.frame_numbers = {w.frame_numbers.back()};
  scratch.frames = w.frames.slice0(T - 1);
  scratch.labels = {w.labels.back()};
  scratch.labeled = {w.labeled.back()};
  return scratch;
}

void evaluate_range(Model& model, std::span<const Window> windows, Supervision rule, std::size_t first,
                    std::size_t step, ConfusionMatrix& cm) {
  Window scratch;
  for (std::size_t i = first; i < windows.size(); i += step) {
    const Window& w = effective_window(model, windows[i], rule, scratch);
    const auto preds = predict(model.forward_window(w.frames));
    for (std::size_t t : supervised_frames(w, rule)) cm.accumulate(preds[t], w.labels[t]);
  }
}

}  // namespace

ConfusionMatrix evaluate(const Model& model, std::span<const Window> windows, Supervision rule, std::size_t threads,
                         int ignore_label) {
  const std::size_t n_cl = model.config().n_cl;
  threads = std::max<std::size_t>(1, std::min(threads, windows.size()));
  std::vector<ConfusionMatrix> partial(threads, ConfusionMatrix(n_cl, ignore_label));
  if (threads == 1) {
    Model local = model;
    evaluate_range(local, windows, rule, 0, 1, partial[0]);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&, w] {
        try {
          Model local = model;
          evaluate_range(local, windows, rule, w, threads, partial[w]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  ConfusionMatrix total(n_cl, ignore_label);
  for (const auto& cm : partial) total.merge(cm);
  return total;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,loss,mean_iu\n";
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.loss << ',';
    if (r.mean_iu) os << *r.mean_iu;
    os << '\n';
  }
  return os.str();
}

TrainLog train(Model& model, std::span<const Window> data, const OptimConfig& optim, const TrainOptions& options) {
  optim.validate();
  if (data.empty()) throw DataError("training set has no windows");
  const int n_cl = static_cast<int>(model.config().n_cl);
  for (const Window& w : data)
    for (const LabelMap& l : w.labels)
      for (int v : l.labels)
        if (v != options.ignore_label && (v < 0 || v >= n_cl)) {
          throw DataError("window " + w.sequence_id + " has class " + std::to_string(v) + " but the model has n_cl = " +
                          std::to_string(n_cl));
        }
  Rng order_rng(optim.seed, "data_order");
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();

  auto params = model.parameters();
  model.zero_grad();
  TrainLog log;
  Window scratch;
  const double inv_batch = 1.0 / static_cast<double>(optim.batch_size);

  for (std::size_t it = 1; it <= optim.iterations; ++it) {
    double loss = 0.0;
    for (std::size_t b = 0; b < optim.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        cursor = 0;
      }
      const Window& w = effective_window(model, data[order[cursor++]], optim.supervision, scratch);
      LossResult lr = window_loss(model, w, optim.supervision, options.ignore_label);
      if (optim.batch_size > 1)
        for (double& g : lr.grad.data()) g *= inv_batch;
      model.backward_window(lr.grad);
      loss += lr.loss * inv_batch;
    }
    if (optim.clip_norm > 0.0) clip_grad_norm(params, optim.clip_norm);
    sgd_momentum_step(params, optim.lr, optim.momentum);

    TrainLogRow row{it, loss, std::nullopt};
    if (optim.eval_every > 0 && it % optim.eval_every == 0 && !options.validation.empty()) {
      row.mean_iu = mean_iu(evaluate(model, options.validation, optim.supervision, options.threads,
                                     options.ignore_label))
                        .value;
    }
    log.rows.push_back(row);
    if (options.on_row) options.on_row(row);
    if (options.checkpoint_dir && optim.checkpoint_every > 0 && it % optim.checkpoint_every == 0) {
      save_checkpoint(model, *options.checkpoint_dir / ("iter_" + std::to_string(it)));
    }
  }
  return log;
}

// ---- gradient checking ---------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
  return m;
}

nlohmann::json GradCheckReport::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& b : blocks) {
    arr.push_back({{"name", b.name},
                   {"sampled", b.sampled},
                   {"max_rel_error", b.max_rel_error},
                   {"mean_rel_error", b.mean_rel_error}});
  }
  return {{"epsilon", epsilon}, {"max_rel_error", max_rel_error()}, {"blocks", arr}};
}

GradCheckReport grad_check(const std::function<double()>& loss, const std::function<void()>& gradients,
                           std::span<const GradCheckBlock> blocks, double epsilon, std::size_t subsample, Rng& rng) {
  for (const auto& b : blocks) b.param->zero_grad();
  gradients();
  std::vector<Tensor> analytic;
  for (const auto& b : blocks) analytic.push_back(b.param->grad);

  GradCheckReport report;
  report.epsilon = epsilon;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    Parameter& p = *blocks[bi].param;
    const std::size_t n = p.value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t take = std::min(subsample, n);
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);

    GradCheckBlockReport br{blocks[bi].name, take, 0.0, 0.0};
    for (std::size_t s = 0; s < take; ++s) {
      const std::size_t k = idx[s];
      const double saved = p.value[k];
      p.value[k] = saved + epsilon;
      const double plus = loss();
      p.value[k] = saved - epsilon;
      const double minus = loss();
      p.value[k] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double err = relative_error(analytic[bi][k], numeric);
      br.max_rel_error = std::max(br.max_rel_error, err);
      br.mean_rel_error += err;
    }
    if (take > 0) br.mean_rel_error /= static_cast<double>(take);
    report.blocks.push_back(br);
  }
  return report;
}

GradCheckReport grad_check(Model& model, const Window& window, Supervision rule, double epsilon,
                           std::size_t subsample, std::uint64_t seed) {
  std::vector<GradCheckBlock> blocks;
  for (const auto& np : model.parameters())
    if (np.trainable) blocks.push_back({np.name, np.param});
  // Loss relative to the unperturbed point, summed per pixel: pixels a
  // perturbation does not reach contribute exactly zero.
  auto terms = [&] {
    const Tensor logits = model.forward_window(window.frames);
    if (rule == Supervision::all_labeled) return softmax_ce_terms(logits, window.labels);
    const std::size_t T = logits.dim(0);
    return softmax_ce_terms(logits.slice0(T - 1), std::span(&window.labels[T - 1], 1));
  };
  const std::vector<long double> reference = terms();
  auto loss = [&] {
    const std::vector<long double> t = terms();
    long double sum = 0.0L;
    for (std::size_t i = 0; i < t.size(); ++i) sum += t[i] - reference[i];
    return static_cast<double>(sum / static_cast<long double>(std::max<std::size_t>(t.size(), 1)));
  };
  auto gradients = [&] {
    model.zero_grad();
    LossResult r = window_loss(model, window, rule);
    model.backward_window(r.grad);
  };
  Rng rng(seed, "gradcheck");
  return grad_check(loss, gradients, blocks, epsilon, subsample, rng);
}

}  // namespace stfcn

namespace stfcn {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

void append(GradCheckReport& into, const std::string& op, GradCheckReport part) {
  for (auto& b : part.blocks) {
    b.name = op + "/" + b.name;
    into.blocks.push_back(std::move(b));
  }
}

}  // namespace

GradCheckReport op_grad_checks(std::uint64_t seed, double epsilon, std::size_t subsample) {
  Rng rng(seed, "opcheck");
  GradCheckReport report;
  report.epsilon = epsilon;

  {
    Parameter x(random_tensor({5}, rng)), W(random_tensor({4, 5}, rng)), b(random_tensor({4}, rng));
    const Tensor R = random_tensor({4}, rng);
    auto loss = [&] { return dot(affine(x.value, W.value, b.value), R); };
    auto grads = [&] { add_inplace(x.grad, affine_backward(R, x.value, W.value, W.grad, b.grad)); };
    const GradCheckBlock blocks[] = {{"x", &x}, {"W", &W}, {"b", &b}};
    append(report, "affine", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  {
    const ConvSpec spec{2, 3, 3, 2, 1, 2};
    Parameter x(random_tensor({2, 2, 9, 8}, rng)), W(random_tensor({3, 2, 3, 3}, rng)), b(random_tensor({3}, rng));
    const Tensor R = random_tensor(conv2d(x.value, spec, W.value, b.value).shape(), rng);
    auto loss = [&] { return dot(conv2d(x.value, spec, W.value, b.value), R); };
    auto grads = [&] { add_inplace(x.grad, conv2d_backward(R, x.value, spec, W.value, W.grad, &b.grad)); };
    const GradCheckBlock blocks[] = {{"input", &x}, {"weight", &W}, {"bias", &b}};
    append(report, "conv2d", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  for (std::size_t factor : {2, 3}) {
    const DeconvSpec spec{2, 3, factor};
    Parameter x(random_tensor({1, 2, 3, 4}, rng)), W(random_tensor({2, 3, spec.kernel(), spec.kernel()}, rng));
    const Tensor R = random_tensor(deconv2d(x.value, spec, W.value).shape(), rng);
    auto loss = [&] { return dot(deconv2d(x.value, spec, W.value), R); };
    auto grads = [&] { add_inplace(x.grad, deconv2d_backward(R, x.value, spec, W.value, &W.grad)); };
    const GradCheckBlock blocks[] = {{"input", &x}, {"weight", &W}};
    append(report, "deconv2d_x" + std::to_string(factor), grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  {
    Parameter x(random_tensor({1, 2, 4, 4}, rng));
    const Tensor R = random_tensor(x.value.shape(), rng);
    auto loss = [&] { return dot(relu(x.value), R); };
    auto grads = [&] { add_inplace(x.grad, relu_backward(R, x.value)); };
    const GradCheckBlock blocks[] = {{"input", &x}};
    append(report, "relu", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  {
    Parameter x(random_tensor({2, 2, 4, 6}, rng));
    const Tensor R = random_tensor({2, 2, 2, 3}, rng);
    std::vector<std::size_t> argmax;
    auto loss = [&] { return dot(max_pool2(x.value, argmax), R); };
    auto grads = [&] {
      max_pool2(x.value, argmax);
      add_inplace(x.grad, max_pool2_backward(R, x.value.shape(), argmax));
    };
    const GradCheckBlock blocks[] = {{"input", &x}};
    append(report, "max_pool2", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  {
    Parameter a(random_tensor({1, 2, 3, 3}, rng)), b(random_tensor({1, 2, 3, 3}, rng));
    const Tensor R = random_tensor(a.value.shape(), rng);
    auto loss = [&] { return dot(elementwise_fuse(a.value, b.value), R); };
    auto grads = [&] {
      auto [da, db] = elementwise_fuse_backward(R);
      add_inplace(a.grad, da);
      add_inplace(b.grad, db);
    };
    const GradCheckBlock blocks[] = {{"a", &a}, {"b", &b}};
    append(report, "fuse", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  {
    const std::size_t m = 3, N = 4;
    LSTMWeights w = LSTMWeights::random(m, N, rng);
    Parameter x(random_tensor({m}, rng)), h(random_tensor({N}, rng)), c(random_tensor({N}, rng));
    const Tensor Rh = random_tensor({N}, rng), Rc = random_tensor({N}, rng);
    auto loss = [&] {
      const auto r = lstm_step(x.value, LSTMState{h.value, c.value, 0}, w);
      return dot(r.next.h, Rh) + dot(r.next.c, Rc);
    };
    auto grads = [&] {
      const auto r = lstm_step(x.value, LSTMState{h.value, c.value, 0}, w);
      const auto g = lstm_step_backward(Rh, Rc, r.cache, w);
      add_inplace(x.grad, g.dx);
      add_inplace(h.grad, g.dh_prev);
      add_inplace(c.grad, g.dc_prev);
    };
    std::vector<GradCheckBlock> blocks{{"x", &x}, {"h_prev", &h}, {"c_prev", &c}};
    auto params = w.params();
    for (std::size_t i = 0; i < params.size(); ++i) blocks.push_back({std::string(LSTMWeights::kFieldNames[i]), params[i]});
    append(report, "lstm_step", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  {
    Parameter z(random_tensor({2, 4, 3, 3}, rng, 2.0));
    std::vector<LabelMap> labels(2, LabelMap(3, 3));
    for (auto& lm : labels)
      for (int& v : lm.labels) v = static_cast<int>(rng.below(4));
    labels[1].labels[4] = kDefaultIgnoreLabel;
    auto loss = [&] { return softmax_ce(z.value, labels).loss; };
    auto grads = [&] { add_inplace(z.grad, softmax_ce(z.value, labels).grad); };
    const GradCheckBlock blocks[] = {{"logits", &z}};
    append(report, "softmax_ce", grad_check(loss, grads, blocks, epsilon, subsample, rng));
  }
  return report;
}

}  // namespace stfcn
