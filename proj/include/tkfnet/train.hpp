#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tkfnet/data.hpp"
#include "tkfnet/layers.hpp"
#include "tkfnet/model.hpp"
#include "tkfnet/ops.hpp"
#include "tkfnet/random.hpp"

namespace tkfnet::train {

/// Polynomial decay from lr_init to lr_end over total_steps.
struct LrSchedule {
    double lr_init = 0.1;
    double lr_end = 0.01;
    std::size_t total_steps = 1;
    double power = 0.5;
};

/// lr_end + (lr_init - lr_end) * (1 - min(t, T) / T)^power, written as an
/// interpolation so both endpoints are reproduced exactly.
inline double lr_at(const LrSchedule& s, std::size_t t) {
    if (s.total_steps == 0) throw std::invalid_argument("lr_at: total_steps must be >= 1");
    const double progress = static_cast<double>(std::min(t, s.total_steps)) / static_cast<double>(s.total_steps);
    const double frac = std::pow(1.0 - progress, s.power);
    return s.lr_init * frac + s.lr_end * (1.0 - frac);
}

/// Heavy-ball momentum: v <- mu * v + g; p <- p - lr(t) * v.
template <typename T = float>
class MomentumOptimizer {
public:
    MomentumOptimizer(LrSchedule schedule, double momentum = 0.9) : schedule_(schedule), momentum_(momentum) {
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
        if (schedule.total_steps == 0) throw ConfigError("schedule total_steps must be >= 1");
    }

    std::size_t step_count() const noexcept { return step_; }
    double momentum() const noexcept { return momentum_; }
    const LrSchedule& schedule() const noexcept { return schedule_; }
    double current_lr() const { return lr_at(schedule_, step_); }
    const std::vector<std::vector<T>>& velocity() const noexcept { return velocity_; }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Every parameter must carry a gradient from a completed backward pass.
    void step(std::span<Parameter<T>> params) {
        for (const auto& p : params) {
            if (!p.value.has_grad()) throw std::logic_error("momentum step: parameter " + p.name + " has no gradient");
        }
        if (velocity_.empty()) {
            for (const auto& p : params) velocity_.emplace_back(p.value.size(), T(0));
        }
        if (velocity_.size() != params.size()) throw std::logic_error("momentum step: parameter list changed size");
        const T lr = static_cast<T>(current_lr());
        const T mu = static_cast<T>(momentum_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto value = params[i].value.data();
            auto grad = params[i].value.grad();
            auto& v = velocity_[i];
            if (v.size() != value.size()) throw std::logic_error("momentum step: parameter " + params[i].name + " changed shape");
            for (std::size_t k = 0; k < value.size(); ++k) {
                v[k] = mu * v[k] + grad[k];
                value[k] -= lr * v[k];
            }
            params[i].value.clear_grad();
        }
        ++step_;
    }

private:
    LrSchedule schedule_;
    double momentum_;
    std::size_t step_ = 0;
    std::vector<std::vector<T>> velocity_;
};

/// Mean cross-entropy of the labelled classes; the training objective.
template <typename T>
BasicTensor<T> compute_loss(BasicTape<T>& tape, const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
    return ops::softmax_cross_entropy(tape, logits, labels);
}

struct Batch {
    Tensor images;
    std::vector<std::size_t> labels;
};

/// Stacks the selected samples, which must share one image size.
inline Batch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: no samples");
    const Shape first = ds.samples.at(indices[0]).image.shape();
    Batch b{Tensor(Shape{indices.size(), first.h, first.w, first.c}), {}};
    const std::size_t per = first.size();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const data::Sample& s = ds.samples.at(indices[i]);
        if (!(s.image.shape() == first)) {
            throw ShapeError("make_batch: sample " + std::to_string(indices[i]) + " is " + s.image.shape().str() +
                             ", expected " + first.str());
        }
        std::copy(s.image.data().begin(), s.image.data().end(), b.images.data().begin() + i * per);
        b.labels.push_back(s.label);
    }
    return b;
}

inline std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    return (samples + batch_size - 1) / batch_size;
}

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;  // learning rate of the epoch's first step
    std::size_t steps = 0;
    double seconds = 0.0;
};

/// One pass over the data in a (seed, epoch)-keyed shuffled order. The final
/// partial batch is kept. Returns the sample-weighted mean loss.
template <typename T>
EpochStats train_epoch(TKFNet<T>& model, const data::Dataset& ds, MomentumOptimizer<T>& opt, std::size_t batch_size,
                       std::uint64_t seed, std::size_t epoch) {
    if (ds.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("train_epoch: batch size must be >= 1");
    const auto start = std::chrono::steady_clock::now();
    const auto order = counter_permutation(ds.size(), mix_key(seed, epoch));
    auto params = model.parameters();
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = opt.current_lr();
    double weighted = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(order.size(), begin + batch_size);
        const Batch batch = make_batch(ds, std::span<const std::size_t>(order).subspan(begin, end - begin));
        BasicTape<T> tape;
        const auto logits = model.forward(tape, tensor_cast_if_needed<T>(batch.images));
        const auto loss = compute_loss(tape, logits, batch.labels);
        tape.backward(loss);
        opt.step(params);
        weighted += static_cast<double>(loss.item()) * static_cast<double>(end - begin);
        ++stats.steps;
    }
    stats.mean_loss = weighted / static_cast<double>(ds.size());
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
}

struct FitOptions {
    std::size_t epochs = 60;
    std::size_t batch_size = 128;
    double lr_init = 0.1;
    double lr_end = 0.01;
    double power = 0.5;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

/// The schedule spans the whole run: epochs * ceil(samples / batch) steps.
inline LrSchedule schedule_for(const FitOptions& o, std::size_t samples) {
    const std::size_t total = o.epochs * steps_per_epoch(samples, o.batch_size);
    return {o.lr_init, o.lr_end, std::max<std::size_t>(total, 1), o.power};
}

/// Runs opts.epochs epochs, calling on_epoch after each one.
template <typename T>
std::vector<EpochStats> fit(TKFNet<T>& model, const data::Dataset& ds, const FitOptions& opts,
                            const std::function<void(const EpochStats&)>& on_epoch = {}) {
    if (ds.empty()) throw std::invalid_argument("fit: empty dataset");
    MomentumOptimizer<T> opt(schedule_for(opts, ds.size()), opts.momentum);
    std::vector<EpochStats> history;
    for (std::size_t e = 0; e < opts.epochs; ++e) {
        history.push_back(train_epoch(model, ds, opt, opts.batch_size, opts.seed, e));
        if (on_epoch) on_epoch(history.back());
    }
    return history;
}

/// Square count matrix, rows = true class, columns = predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const noexcept { return classes_; }

    void add(std::size_t truth, std::size_t predicted) {
        if (truth >= classes_ || predicted >= classes_) throw std::out_of_range("confusion matrix index out of range");
        ++counts_[truth * classes_ + predicted];
    }

    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }

    std::size_t total() const {
        std::size_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }

    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t k = 0; k < classes_; ++k) t += at(k, k);
        return t;
    }

    std::size_t row_sum(std::size_t truth) const {
        std::size_t t = 0;
        for (std::size_t p = 0; p < classes_; ++p) t += at(truth, p);
        return t;
    }

    /// CSV with a header row and a leading column of class names.
    std::string to_csv(std::span<const std::string> names) const {
        if (names.size() != classes_) throw ShapeError("confusion csv: " + std::to_string(names.size()) + " names for " + std::to_string(classes_) + " classes");
        std::ostringstream out;
        out << "true\\pred";
        for (const auto& n : names) out << ',' << n;
        out << '\n';
        for (std::size_t t = 0; t < classes_; ++t) {
            out << names[t];
            for (std::size_t p = 0; p < classes_; ++p) out << ',' << at(t, p);
            out << '\n';
        }
        return out.str();
    }

private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;
};

struct Metrics {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    std::vector<double> per_class_recall;  // 0 for classes without samples
};

inline Metrics metrics_from(const ConfusionMatrix& cm) {
    Metrics m;
    m.confusion = cm;
    const std::size_t total = cm.total();
    m.accuracy = total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
    for (std::size_t k = 0; k < cm.classes(); ++k) {
        const std::size_t row = cm.row_sum(k);
        m.per_class_recall.push_back(row == 0 ? 0.0 : static_cast<double>(cm.at(k, k)) / static_cast<double>(row));
    }
    return m;
}

/// Index of the largest logit per sample; ties resolve to the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const BasicTensor<T>& logits) {
    const Shape s = logits.shape();
    std::vector<std::size_t> out(s.n);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* row = &logits[n * s.c];
        out[n] = static_cast<std::size_t>(std::max_element(row, row + s.c) - row);
    }
    return out;
}

template <typename T>
Metrics evaluate(const TKFNet<T>& model, const data::Dataset& ds, std::size_t batch_size = 64) {
    if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const std::size_t q = model.config().classes;
    ConfusionMatrix cm(q);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t begin = 0; begin < idx.size(); begin += batch_size) {
        const std::size_t end = std::min(idx.size(), begin + batch_size);
        const Batch batch = make_batch(ds, std::span<const std::size_t>(idx).subspan(begin, end - begin));
        BasicTape<T> tape(false);
        const auto predicted = argmax_rows(model.forward(tape, tensor_cast_if_needed<T>(batch.images)));
        for (std::size_t i = 0; i < predicted.size(); ++i) cm.add(batch.labels[i], predicted[i]);
    }
    return metrics_from(cm);
}

/// Softmax class distribution for every image in the batch.
template <typename T>
BasicTensor<T> predict_proba(const TKFNet<T>& model, const BasicTensor<T>& images) {
    BasicTape<T> tape(false);
    return ops::softmax(model.forward(tape, images));
}

}  // namespace tkfnet::train
