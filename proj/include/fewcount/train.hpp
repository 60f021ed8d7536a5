#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fewcount/model.hpp"

namespace fewcount {

struct TrainConfig {
    double lr = 1e-5;
    int batch = 1;
    int max_epochs = 1500;
    int es_patience = 200;            // epochs
    double es_min_rel_improve = 0.01; // relative improvement of the best monitor
    int k_folds = 5;
    uint64_t seed = 0;

    void validate() const {
        if (!(lr >= 0.0)) throw ConfigError("train config: lr must be >= 0");
        if (batch < 1) throw ConfigError("train config: batch must be >= 1");
        if (max_epochs < 1) throw ConfigError("train config: max_epochs must be >= 1");
        if (es_patience < 1) throw ConfigError("train config: es_patience must be >= 1");
        if (!(es_min_rel_improve > 0.0 && es_min_rel_improve < 1.0))
            throw ConfigError("train config: es_min_rel_improve must be in (0,1)");
        if (k_folds < 2) throw ConfigError("train config: k_folds must be >= 2");
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["lr"] = c.lr;
    j["batch"] = c.batch;
    j["max_epochs"] = c.max_epochs;
    j["es_patience"] = c.es_patience;
    j["es_min_rel_improve"] = c.es_min_rel_improve;
    j["k_folds"] = c.k_folds;
    j["seed"] = c.seed;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "lr", "batch", "max_epochs", "es_patience", "es_min_rel_improve", "k_folds", "seed"};
    std::string bad;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            bad += (bad.empty() ? "" : ", ") + it.key();
    if (!bad.empty()) throw ConfigError("unknown train config keys: " + bad);
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.es_patience = j.value("es_patience", c.es_patience);
    c.es_min_rel_improve = j.value("es_min_rel_improve", c.es_min_rel_improve);
    c.k_folds = j.value("k_folds", c.k_folds);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

// ---- optimiser ----------------------------------------------------------------

template <typename T>
struct AdamState {
    std::unordered_map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments; // m, v
    long long t = 0;
};

// One Adam update with bias correction over the given gradients. Parameters
// without a gradient entry are left untouched.
template <typename T>
void adam_step(ParamBundle<T>& params, const std::unordered_map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
    for (const auto& [name, g] : grads)
        if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient for " + name);
    state.t += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Tensor<T>& p = params.at(name);
        if (!same_shape(p, g))
            throw ShapeError("adam_step: gradient shape mismatch for " + name);
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            it = state.moments
                     .emplace(name, std::make_pair(Tensor<T>(p.shape()), Tensor<T>(p.shape())))
                     .first;
        Tensor<T>& m = it->second.first;
        Tensor<T>& v = it->second.second;
        for (long long i = 0; i < p.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
            double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
            p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
        }
    }
}

// ---- metrics ------------------------------------------------------------------

struct SamplePrediction {
    std::string id;
    double predicted = 0.0;
    double truth = 0.0;
};

struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double mnae = 0.0;
    struct Row {
        std::string id;
        double predicted;
        double truth;
        double rel_err;
    };
    std::vector<Row> per_sample;
};

inline MetricsReport metrics(const std::vector<SamplePrediction>& preds) {
    if (preds.empty()) throw ValidationError("metrics: empty prediction list");
    MetricsReport r;
    double se = 0.0;
    for (const SamplePrediction& p : preds) {
        if (!(p.truth > 0.0))
            throw ValidationError("metrics: ground truth count must be positive for MNAE (id " +
                                  p.id + ")");
        double err = p.predicted - p.truth;
        double rel = std::abs(err) / p.truth;
        r.mae += std::abs(err);
        se += err * err;
        r.mnae += rel;
        r.per_sample.push_back(MetricsReport::Row{p.id, p.predicted, p.truth, rel});
    }
    double n = static_cast<double>(preds.size());
    r.mae /= n;
    r.rmse = std::sqrt(se / n);
    r.mnae /= n;
    return r;
}

inline MetricsReport metrics(const std::vector<std::pair<double, double>>& pairs) {
    std::vector<SamplePrediction> preds;
    preds.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i)
        preds.push_back(SamplePrediction{std::to_string(i), pairs[i].first, pairs[i].second});
    return metrics(preds);
}

// ---- early stopping -------------------------------------------------------------

enum class EarlyStopDecision { continue_training, stop };

// Stops once the best value so far has gone `patience` consecutive epochs
// without a relative improvement of at least `min_rel_improve` (inclusive).
inline EarlyStopDecision early_stop(const std::vector<double>& history, int patience,
                                    double min_rel_improve) {
    if (history.empty()) throw ValidationError("early_stop: empty history");
    double best = history[0];
    int stale = 0;
    for (size_t i = 1; i < history.size(); ++i) {
        double v = history[i];
        bool significant = v < best && (best - v) >= min_rel_improve * best;
        if (significant) stale = 0;
        else ++stale;
        if (v < best) best = v;
        if (stale >= patience) return EarlyStopDecision::stop;
    }
    return EarlyStopDecision::continue_training;
}

// ---- training -------------------------------------------------------------------

// A sample prepared for the training loop: normalised image, ground-truth
// density, and the exemplar boxes fixed for the whole run.
template <typename T>
struct TrainItem {
    std::string id;
    Tensor<T> image; // (3,H,W), normalised
    Tensor<T> gt;    // (H,W)
    std::vector<BoundingBox> exemplars;
    double gt_count = 0.0;
};

// Normalises images, renders ground-truth density maps, and draws
// `exemplars_per_image` boxes per sample (uniformly, without replacement,
// once per run).
template <typename T>
std::vector<TrainItem<T>> prepare_items(const std::vector<ImageSample>& samples,
                                        const NormStats& stats, int exemplars_per_image,
                                        uint64_t seed) {
    if (exemplars_per_image < 1)
        throw ConfigError("prepare_items: exemplars_per_image must be >= 1");
    Rng rng(seed);
    std::vector<TrainItem<T>> items;
    items.reserve(samples.size());
    for (const ImageSample& s : samples) {
        if (s.dots.empty())
            throw ValidationError("sample " + s.id + ": training samples need at least one dot");
        if (s.boxes.empty())
            throw ValidationError("sample " + s.id + ": no annotated boxes to draw exemplars from");
        TrainItem<T> item;
        item.id = s.id;
        item.image = normalize<T>(s, stats);
        item.gt = gt_density(s.dots, s.height(), s.width()).template cast<T>();
        item.gt_count = static_cast<double>(s.dots.size());
        std::vector<size_t> order(s.boxes.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order.begin(), order.end());
        size_t take = std::min<size_t>(static_cast<size_t>(exemplars_per_image), order.size());
        for (size_t i = 0; i < take; ++i) item.exemplars.push_back(s.boxes[order[i]]);
        items.push_back(std::move(item));
    }
    return items;
}

struct EpochStats {
    int epoch = 0; // 1-based
    double mean_loss = 0.0;
    double train_mnae = 0.0;   // from the epoch's train-mode forward passes
    double monitor_mnae = 0.0; // validation MNAE, or train MNAE without a val set
    double seconds = 0.0;
};

template <typename T>
struct TrainResult {
    ParamBundle<T> best_params;
    int best_epoch = 0;
    double best_monitor = 0.0;
    int epochs_run = 0;
    MetricsReport train_metrics; // eval-mode metrics at the best parameters
    MetricsReport val_metrics;   // only when a validation set was given
    bool has_val_metrics = false;
    std::vector<double> monitor_history;
    std::vector<double> loss_history;
};

// Epoch callback; return false to stop training (used by overfit harnesses
// and progress reporting).
using EpochCallback = std::function<bool(const EpochStats&)>;

// Full training protocol: seeded shuffling, batch accumulation (batch size 1
// by default), MSE loss, Adam updates, per-epoch monitoring, best-checkpoint
// tracking and early stopping. The monitor is the validation MNAE when a
// validation set is given, otherwise the training MNAE.
template <typename T>
TrainResult<T> train_one(Model<T>& model, const std::vector<TrainItem<T>>& train_items,
                         const std::vector<TrainItem<T>>& val_items, const TrainConfig& tcfg,
                         const EpochCallback& on_epoch = {}) {
    tcfg.validate();
    if (train_items.empty()) throw ValidationError("train_one: empty training set");
    std::vector<std::string> trainable = model.trainable_names();
    AdamState<T> adam;
    Rng order_rng(mix_seed(tcfg.seed, 0x0bdeb));

    TrainResult<T> result;
    result.best_params = model.params();
    result.best_monitor = std::numeric_limits<double>::infinity();

    std::vector<size_t> order(train_items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto eval_mnae = [&](const std::vector<TrainItem<T>>& items) {
        std::vector<SamplePrediction> preds;
        for (const TrainItem<T>& it : items) {
            Tensor<T> d = model.predict(it.image, it.exemplars);
            preds.push_back(SamplePrediction{it.id, count(d), it.gt_count});
        }
        return metrics(preds).mnae;
    };

    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        order_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        double rel_err_sum = 0.0;
        std::unordered_map<std::string, Tensor<T>> grad_acc;
        int in_batch = 0;
        auto flush_batch = [&]() {
            if (in_batch == 0) return;
            if (in_batch > 1)
                for (auto& [name, g] : grad_acc)
                    for (long long i = 0; i < g.size(); ++i)
                        g[i] = static_cast<T>(static_cast<double>(g[i]) / in_batch);
            adam_step(model.params(), grad_acc, adam, tcfg.lr);
            grad_acc.clear();
            in_batch = 0;
        };
        for (size_t oi = 0; oi < order.size(); ++oi) {
            const TrainItem<T>& item = train_items[order[oi]];
            Graph<T> g(mix_seed(tcfg.seed, static_cast<uint64_t>(epoch) * 1000003ull + oi));
            auto fwd = model.forward(g, item.image, item.exemplars, Mode::train);
            Var<T> loss = mse_loss(fwd.density, item.gt);
            double lv = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(lv))
                throw NumericError("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", sample " + item.id);
            loss_sum += lv;
            rel_err_sum += std::abs(fwd.density.value().dsum() - item.gt_count) / item.gt_count;
            g.backward(loss);
            for (const std::string& name : trainable) {
                Var<T> pv = fwd.bound.at(name);
                if (!g.has_grad(pv.id)) continue;
                const Tensor<T>& pg = g.grad(pv.id);
                auto it = grad_acc.find(name);
                if (it == grad_acc.end()) {
                    grad_acc.emplace(name, pg);
                } else {
                    Tensor<T>& acc = it->second;
                    for (long long i = 0; i < acc.size(); ++i) acc[i] += pg[i];
                }
            }
            if (++in_batch >= tcfg.batch) flush_batch();
        }
        flush_batch();

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(train_items.size());
        stats.train_mnae = rel_err_sum / static_cast<double>(train_items.size());
        stats.monitor_mnae = val_items.empty() ? stats.train_mnae : eval_mnae(val_items);
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                            .count();
        result.loss_history.push_back(stats.mean_loss);
        result.monitor_history.push_back(stats.monitor_mnae);
        result.epochs_run = epoch;
        if (stats.monitor_mnae < result.best_monitor) {
            result.best_monitor = stats.monitor_mnae;
            result.best_epoch = epoch;
            result.best_params = model.params();
        }
        if (on_epoch && !on_epoch(stats)) break;
        if (early_stop(result.monitor_history, tcfg.es_patience, tcfg.es_min_rel_improve) ==
            EarlyStopDecision::stop)
            break;
    }

    // restore the best parameters and measure both splits in eval mode
    model.params() = result.best_params;
    auto full_metrics = [&](const std::vector<TrainItem<T>>& items) {
        std::vector<SamplePrediction> preds;
        for (const TrainItem<T>& it : items) {
            Tensor<T> d = model.predict(it.image, it.exemplars);
            preds.push_back(SamplePrediction{it.id, count(d), it.gt_count});
        }
        return metrics(preds);
    };
    result.train_metrics = full_metrics(train_items);
    if (!val_items.empty()) {
        result.val_metrics = full_metrics(val_items);
        result.has_val_metrics = true;
    }
    return result;
}

// ---- cross-validation -------------------------------------------------------------

struct FoldReport {
    int fold = 0;
    NormStats stats; // computed from the k-1 training folds only
    MetricsReport train_metrics;
    MetricsReport val_metrics;
    int best_epoch = 0;
    int epochs_run = 0;
};

struct CrossvalReport {
    std::vector<FoldReport> folds;
    double mean_val_mnae = 0.0;
    double std_val_mnae = 0.0; // population standard deviation over folds
    double mean_val_mae = 0.0;
    double mean_val_rmse = 0.0;
};

// Called per finished fold with the trained model (holding its best
// parameters) and checkpoint metadata; used by the CLI to save checkpoints.
template <typename T>
using FoldCallback = std::function<void(int, Model<T>&, const CheckpointMeta&)>;

// k-fold cross-validation: per fold, normalisation statistics come from the
// k-1 training folds and are reused for the validation fold. Folds may run
// concurrently (jobs > 1); seeds are derived per fold, so results do not
// depend on the job count.
template <typename T>
CrossvalReport crossval(const std::vector<ImageSample>& samples, int k, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, int jobs = 1, int exemplars_per_image = 3,
                        const FoldCallback<T>& on_fold = {},
                        const EpochCallback& on_epoch = {}) {
    if (k < 2) throw ConfigError("crossval: k must be >= 2");
    FoldSplit folds = make_folds(samples, k, tcfg.seed);
    CrossvalReport report;
    report.folds.resize(static_cast<size_t>(k));
    std::vector<std::exception_ptr> errors(static_cast<size_t>(k));

    auto run_fold = [&](int fold) {
        try {
            std::vector<ImageSample> train_set, val_set;
            for (const ImageSample& s : samples) {
                if (folds.fold_assignments.at(s.id) == fold) val_set.push_back(s);
                else train_set.push_back(s);
            }
            NormStats stats = compute_norm_stats(train_set);
            uint64_t fold_salt = static_cast<uint64_t>(fold) + 1;
            std::vector<TrainItem<T>> train_items =
                prepare_items<T>(train_set, stats, exemplars_per_image,
                                 mix_seed(tcfg.seed, 7000 + fold_salt));
            std::vector<TrainItem<T>> val_items =
                prepare_items<T>(val_set, stats, exemplars_per_image,
                                 mix_seed(tcfg.seed, 8000 + fold_salt));
            ModelConfig fold_cfg = mcfg;
            fold_cfg.seed = mix_seed(mcfg.seed, 100 + fold_salt);
            TrainConfig fold_tcfg = tcfg;
            fold_tcfg.seed = mix_seed(tcfg.seed, 200 + fold_salt);
            Model<T> model = Model<T>::build(fold_cfg);
            TrainResult<T> r = train_one(model, train_items, val_items, fold_tcfg, on_epoch);
            FoldReport& fr = report.folds[static_cast<size_t>(fold)];
            fr.fold = fold;
            fr.stats = stats;
            fr.train_metrics = r.train_metrics;
            fr.val_metrics = r.val_metrics;
            fr.best_epoch = r.best_epoch;
            fr.epochs_run = r.epochs_run;
            if (on_fold) {
                CheckpointMeta meta;
                meta.epoch = r.best_epoch;
                meta.best_val_mnae = r.val_metrics.mnae;
                meta.has_norm_stats = true;
                meta.norm = stats;
                on_fold(fold, model, meta);
            }
        } catch (...) {
            errors[static_cast<size_t>(fold)] = std::current_exception();
        }
    };

    if (jobs <= 1) {
        for (int f = 0; f < k; ++f) run_fold(f);
    } else {
        for (int start = 0; start < k; start += jobs) {
            std::vector<std::thread> pool;
            for (int f = start; f < std::min(k, start + jobs); ++f)
                pool.emplace_back(run_fold, f);
            for (std::thread& t : pool) t.join();
        }
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

    double sum = 0.0;
    for (const FoldReport& fr : report.folds) {
        sum += fr.val_metrics.mnae;
        report.mean_val_mae += fr.val_metrics.mae;
        report.mean_val_rmse += fr.val_metrics.rmse;
    }
    report.mean_val_mnae = sum / k;
    report.mean_val_mae /= k;
    report.mean_val_rmse /= k;
    double var = 0.0;
    for (const FoldReport& fr : report.folds) {
        double d = fr.val_metrics.mnae - report.mean_val_mnae;
        var += d * d;
    }
    report.std_val_mnae = std::sqrt(var / k);
    return report;
}

} // namespace fewcount
