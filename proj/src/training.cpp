#include "glaformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

namespace glaformer {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (batch == 0) throw ConfigError("batch size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (threads == 0) throw ConfigError("threads must be at least 1");
}

template <typename T>
AdamState<T> AdamState<T>::for_params(std::span<const NamedParam<T>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.var.shape());
    s.v.emplace_back(p.var.shape());
  }
  return s;
}

template <typename T>
void adam_step(std::span<const NamedParam<T>> params, AdamState<T>& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("Adam state holds " + std::to_string(state.m.size()) +
                        " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (const auto& p : params) {
    if (!p.var.has_grad()) throw ContractError("parameter '" + p.name + "' has no gradient");
  }
  ++state.t;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, double(state.t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, double(state.t)));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var<T> var = params[k].var;
    const auto g = var.grad().data();
    auto w = var.mutable_value().data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
ConfusionCounts evaluate(const ModelParams<T>& params, const ModelConfig& cfg, const HsiCube& t1,
                         const HsiCube& t2, const LabelMap& labels,
                         std::span<const std::size_t> pixels, std::size_t threads) {
  check_paired(t1, labels);
  const auto decisions = predict_pixels(t1, t2, params, cfg, pixels, threads);
  ConfusionCounts c;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const bool truth = labels.labels[pixels[i]] != 0;
    const bool pred = decisions[i] != 0;
    if (truth) {
      pred ? ++c.tp : ++c.fn;
    } else {
      pred ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

namespace {

// Forward + backward of one sample's loss scaled by `weight`; returns the
// unscaled loss.
template <typename T>
double sample_step(const ModelParams<T>& params, const ModelConfig& cfg, const TrainingData& data,
                   std::size_t pixel, T weight) {
  PatchPair pp = extract_patch_pair(data.t1, data.t2, {pixel / data.t1.width, pixel % data.t1.width},
                                    cfg.patch);
  pp.label = data.labels.labels[pixel];
  const auto loss = cross_entropy(forward_pair(pp, params, cfg), pp.label);
  const double value = double(loss.value()[0]);
  if (!std::isfinite(value)) throw NumericError("loss is not finite");
  backward(scale(loss, weight));
  return value;
}

std::string train_failure(std::size_t epoch, std::size_t batch, const std::string& what) {
  return "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
         ": " + what;
}

}  // namespace

template <typename T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  model_cfg.validate();
  check_paired(data.t1, data.t2);
  check_paired(data.t1, data.labels);
  if (data.split.train.empty() || data.split.val.empty()) {
    throw ConfigError("training needs non-empty train and validation splits");
  }

  auto params = ModelParams<T>::init(model_cfg, cfg.seed);
  const auto named = params.named();
  auto state = AdamState<T>::for_params(named);
  Rng shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  TrainResult<T> result;
  result.best = params.clone();
  double best_oa = -1.0;

  std::vector<std::size_t> order = data.split.train;
  const std::size_t n = order.size();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch, ++batch_index) {
      const std::size_t end = std::min(n, start + cfg.batch);
      const T weight = T(1) / T(end - start);
      params.zero_grad();
      std::vector<double> losses(end - start, 0.0);
      try {
        const std::size_t workers = std::min(cfg.threads, end - start);
        if (workers <= 1) {
          for (std::size_t i = start; i < end; ++i) {
            losses[i - start] = sample_step(params, model_cfg, data, order[i], weight);
          }
        } else {
          std::vector<ModelParams<T>> replicas;
          for (std::size_t w = 0; w < workers; ++w) replicas.push_back(params.clone());
          std::vector<std::exception_ptr> errors(workers);
          std::vector<std::thread> pool;
          const std::size_t chunk = (end - start + workers - 1) / workers;
          for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
              try {
                const std::size_t b = start + w * chunk, e = std::min(end, b + chunk);
                for (std::size_t i = b; i < e; ++i) {
                  losses[i - start] = sample_step(replicas[w], model_cfg, data, order[i], weight);
                }
              } catch (...) {
                errors[w] = std::current_exception();
              }
            });
          }
          for (auto& th : pool) th.join();
          for (auto& err : errors) {
            if (err) std::rethrow_exception(err);
          }
          for (std::size_t w = 0; w < workers; ++w) {
            const auto replica_named = replicas[w].named();
            for (std::size_t k = 0; k < named.size(); ++k) {
              if (!replica_named[k].var.has_grad()) continue;
              const auto src = replica_named[k].var.grad().data();
              auto dst = Var<T>(named[k].var).mutable_grad().data();
              for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            }
          }
        }
      } catch (const NumericError& e) {
        throw TrainingError(train_failure(epoch, batch_index, e.what()));
      }
      for (double l : losses) loss_sum += l;
      adam_step<T>(named, state, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(n);
    if (!std::isfinite(rec.train_loss)) {
      throw TrainingError(train_failure(epoch, batch_index, "mean epoch loss is not finite"));
    }
    const auto val = evaluate(params, model_cfg, data.t1, data.t2, data.labels, data.split.val,
                              cfg.threads);
    rec.val_oa = overall_accuracy(val);
    try {
      rec.val_kappa = kappa(val);
    } catch (const UndefinedKappaError&) {
      rec.val_kappa.reset();
    }
    if (rec.val_oa > best_oa) {
      best_oa = rec.val_oa;
      result.best = params.clone();
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
  }
  return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_oa,val_kappa\n";
  char buf[128];
  for (const auto& r : history) {
    if (r.val_kappa) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_oa,
                    *r.val_kappa);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,nan\n", r.epoch, r.train_loss, r.val_oa);
    }
    os << buf;
  }
  return os.str();
}

void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << history_csv(history);
  if (!out) throw IoError("write failed for " + path.string());
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " checked=" << checked << " max_rel_error=" << max_rel_error
     << " worst=" << worst_param << "[" << worst_index << "] analytic=" << worst_analytic
     << " numeric=" << worst_numeric;
  if (!offending.empty()) {
    os << " offending=";
    for (std::size_t i = 0; i < offending.size(); ++i) os << (i ? "," : "") << offending[i];
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Var<double>()>& loss,
                           std::span<const NamedParam<double>> params, const GradCheckOptions& opts) {
  for (const auto& p : params) Var<double>(p.var).zero_grad();
  {
    const auto root = loss();
    backward(root);
  }
  std::vector<Tensor<double>> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.var.has_grad() ? p.var.grad() : Tensor<double>(p.var.shape()));
  }

  auto eval = [&]() {
    NoGradGuard no_grad;
    return loss().value()[0];
  };

  GradCheckReport report;
  Rng rng(opts.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var<double> var = params[k].var;
    auto& values = var.mutable_value();
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opts.max_per_param > 0 && idx.size() > opts.max_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_per_param);
      std::sort(idx.begin(), idx.end());
    }
    bool offending = false;
    for (std::size_t i : idx) {
      const double orig = values[i];
      values[i] = orig + opts.step;
      const double up = eval();
      values[i] = orig - opts.step;
      const double down = eval();
      values[i] = orig;
      const double numeric = (up - down) / (2 * opts.step);
      const double a = analytic[k][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = rel;
        report.worst_param = params[k].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      if (!(rel < opts.tolerance)) offending = true;
    }
    if (offending) report.offending.push_back(params[k].name);
  }
  report.passed = report.offending.empty();
  return report;
}

GradCheckReport grad_check_model(const ModelConfig& cfg, const ModelParams<double>& params,
                                 const PatchPair& sample, const GradCheckOptions& opts) {
  const auto named = params.named();
  return grad_check(
      [&]() { return cross_entropy(forward_pair(sample, params, cfg), sample.label); }, named, opts);
}

#define GLAFORMER_INSTANTIATE(T)                                                                \
  template struct AdamState<T>;                                                                 \
  template void adam_step<T>(std::span<const NamedParam<T>>, AdamState<T>&, const TrainConfig&); \
  template ConfusionCounts evaluate<T>(const ModelParams<T>&, const ModelConfig&, const HsiCube&, \
                                       const HsiCube&, const LabelMap&,                          \
                                       std::span<const std::size_t>, std::size_t);               \
  template TrainResult<T> train<T>(const ModelConfig&, const TrainingData&, const TrainConfig&);

GLAFORMER_INSTANTIATE(float)
GLAFORMER_INSTANTIATE(double)

}  // namespace glaformer
