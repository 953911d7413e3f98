#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "nsce/buffer.hpp"
#include "nsce/heads.hpp"
#include "nsce/losses.hpp"
#include "nsce/math.hpp"
#include "nsce/metrics.hpp"
#include "nsce/optim.hpp"
#include "nsce/stream.hpp"

namespace nsce {

class TrainingError : public std::runtime_error {
  public:
    TrainingError(const std::string& what, std::size_t iteration)
        : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
          iteration(iteration) {}
    std::size_t iteration;
};

struct TrainerConfig {
    double gamma = 0.01;
    double tau = 0.2;            // confusion threshold for targeted replay
    AdamWConfig optim;
    bool lite_mode = false;
    double lite_threshold = 0.9;
    bool lite_latch = true;      // latch the freeze until the task boundary
    double ncm_momentum = 0.1;
    double acc_decay = 0.9;      // EWMA decay for the running task accuracy
    std::size_t eval_interval = 100;
    bool targeted_replay = true; // false: plain cross-entropy replay (ER)
    bool pair_softmax = true;    // Eq. 7 reading: renormalize over the pair
    std::size_t adapter_hidden = 0;  // 0 disables the adapter
    double fixed_v_m = 0.0;      // >0: simulated throughput; 0: measured wall clock
    std::uint64_t seed = 0;
};

// Analytic gradients of the per-batch objective
//   L = L_ce + gamma * (L_p + L_s)
// with respect to every trainable tensor, including through the adapter.
struct BatchGradients {
    LossBreakdown losses;
    Matrix grad_W;
    Vec grad_bias;
    Matrix grad_W1;
    Vec grad_b1;
    std::vector<Vec> representations;
};

inline BatchGradients nsce_objective(const std::vector<Sample>& batch, const LinearHead& head,
                                     const AdapterHead& adapter, const NcmState& ncm, double gamma,
                                     const std::vector<int>& active_classes) {
    const std::size_t n = batch.size();
    if (n == 0) throw LossError("nsce_objective: empty batch");

    BatchGradients out;
    out.grad_W = Matrix(head.W.rows, head.W.cols);
    out.grad_bias.assign(head.bias.size(), 0.0);
    if (adapter.enabled) {
        out.grad_W1 = Matrix(adapter.W1.rows, adapter.W1.cols);
        out.grad_b1.assign(adapter.b1.size(), 0.0);
    }

    std::vector<Vec> pre_acts(n), logits(n);
    std::vector<int> labels(n);
    out.representations.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (adapter.enabled) pre_acts[i] = adapter.pre_activation(batch[i].features);
        out.representations[i] = adapter.forward(batch[i].features);
        logits[i] = affine_transpose(head.W, head.bias, out.representations[i]);
        labels[i] = batch[i].label;
    }

    const CeResult ce = cross_entropy(logits, labels);
    out.losses.ce = ce.loss;

    const SparsityResult ls = sparsity_regularizer(head.W);
    out.losses.ls = ls.loss;

    std::vector<Vec> grad_rep(n);
    for (std::size_t i = 0; i < n; ++i) grad_rep[i].assign(out.representations[i].size(), 0.0);

    // maximum separation over active classes; classes absent from the batch
    // fall back to their constant prototype
    if (active_classes.size() >= 2) {
        std::vector<ClassRepresentative> reps;
        std::vector<std::vector<std::size_t>> members;  // batch indices per representative
        for (int cls : active_classes) {
            std::vector<std::size_t> mine;
            for (std::size_t i = 0; i < n; ++i)
                if (labels[i] == cls) mine.push_back(i);
            ClassRepresentative rep;
            rep.cls = cls;
            if (!mine.empty()) {
                rep.from_batch = true;
                rep.representation.assign(out.representations[mine[0]].size(), 0.0);
                for (std::size_t i : mine) axpy(1.0, out.representations[i], rep.representation);
                for (double& v : rep.representation) v /= static_cast<double>(mine.size());
            } else {
                const auto& proto = ncm.prototypes[static_cast<std::size_t>(cls)];
                if (!proto) continue;  // nothing sensible to stand in yet
                rep.from_batch = false;
                rep.representation = *proto;
            }
            reps.push_back(std::move(rep));
            members.push_back(std::move(mine));
        }
        if (reps.size() >= 2) {
            const SeparationResult sep = max_separation(reps);
            out.losses.lp = sep.loss;
            for (std::size_t k = 0; k < reps.size(); ++k) {
                if (!reps[k].from_batch) continue;
                const double inv = 1.0 / static_cast<double>(members[k].size());
                for (std::size_t i : members[k]) axpy(gamma * inv, sep.grad[k], grad_rep[i]);
            }
        }
    }

    out.losses.gamma = gamma;
    out.losses.total = total_loss(out.losses.ce, out.losses.ls, out.losses.lp, gamma);

    // backprop: logits -> (W, bias, representation)
    for (std::size_t i = 0; i < n; ++i) {
        const Vec& g = ce.grad_logits[i];
        const Vec& r = out.representations[i];
        for (std::size_t row = 0; row < head.W.rows; ++row)
            for (std::size_t c = 0; c < head.W.cols; ++c) out.grad_W(row, c) += r[row] * g[c];
        for (std::size_t c = 0; c < head.W.cols; ++c) out.grad_bias[c] += g[c];
        for (std::size_t row = 0; row < head.W.rows; ++row) {
            double acc = 0.0;
            for (std::size_t c = 0; c < head.W.cols; ++c) acc += head.W(row, c) * g[c];
            grad_rep[i][row] += acc;
        }
    }
    for (std::size_t i = 0; i < head.W.size(); ++i) out.grad_W.a[i] += gamma * ls.grad.a[i];

    // representation -> adapter parameters (ReLU subgradient 0 at the kink)
    if (adapter.enabled) {
        for (std::size_t i = 0; i < n; ++i) {
            const Vec& x = batch[i].features;
            for (std::size_t h = 0; h < adapter.W1.cols; ++h) {
                if (pre_acts[i][h] <= 0.0) continue;
                const double gz = grad_rep[i][h];
                out.grad_b1[h] += gz;
                for (std::size_t row = 0; row < adapter.W1.rows; ++row)
                    out.grad_W1(row, h) += x[row] * gz;
            }
        }
    }
    return out;
}

// Latched freeze gate: fires once the running current-task accuracy (from
// NCM predictions) exceeds the threshold, stays on until the task boundary.
class LiteGate {
  public:
    bool check(double running_task_accuracy, const TrainerConfig& cfg) {
        if (!cfg.lite_mode) return false;
        const bool above = running_task_accuracy > cfg.lite_threshold;
        if (cfg.lite_latch) {
            if (above) fired_ = true;
            return fired_;
        }
        fired_ = above;
        return fired_;
    }
    void reset() { fired_ = false; }
    bool fired() const { return fired_; }

  private:
    bool fired_ = false;
};

// Row-normalized confusion matrix of the current head over the full buffer.
inline std::vector<Vec> buffer_confusion(const MemoryBuffer& buffer, const LinearHead& head,
                                         const AdapterHead& adapter, std::size_t num_classes) {
    std::vector<Vec> confusion(num_classes, Vec(num_classes, 0.0));
    Vec rows(num_classes, 0.0);
    for (const Sample& s : buffer.contents()) {
        const auto fwd = forward(s.features, adapter, head);
        const auto [probs, pred] = softmax_predict(fwd.logits);
        (void)probs;
        confusion[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(pred)] += 1.0;
        rows[static_cast<std::size_t>(s.label)] += 1.0;
    }
    for (std::size_t r = 0; r < num_classes; ++r)
        if (rows[r] > 0.0)
            for (double& v : confusion[r]) v /= rows[r];
    return confusion;
}

// Off-diagonal entries exceeding tau, merged to unordered pairs (m < n).
inline std::vector<std::pair<int, int>> confused_pairs(const std::vector<Vec>& confusion, double tau) {
    std::vector<std::pair<int, int>> pairs;
    const std::size_t c = confusion.size();
    for (std::size_t m = 0; m < c; ++m)
        for (std::size_t n = m + 1; n < c; ++n)
            if (confusion[m][n] > tau || confusion[n][m] > tau)
                pairs.emplace_back(static_cast<int>(m), static_cast<int>(n));
    return pairs;
}

class Trainer {
  public:
    Trainer(std::size_t dim, std::size_t num_classes, const TrainerConfig& cfg)
        : cfg_(cfg), dim_(dim), num_classes_(num_classes), ncm_(num_classes, cfg.ncm_momentum) {
        Rng rng(cfg.seed);
        if (cfg.adapter_hidden > 0) {
            adapter_ = AdapterHead(dim, cfg.adapter_hidden, rng);
            head_ = LinearHead(cfg.adapter_hidden, num_classes, rng);
        } else {
            head_ = LinearHead(dim, num_classes, rng);
        }
    }

    LinearHead& head() { return head_; }
    const LinearHead& head() const { return head_; }
    AdapterHead& adapter() { return adapter_; }
    const AdapterHead& adapter() const { return adapter_; }
    NcmState& ncm() { return ncm_; }
    const NcmState& ncm() const { return ncm_; }
    const TrainerConfig& config() const { return cfg_; }
    LiteGate& gate() { return gate_; }

    std::vector<int> active_classes() const {
        std::vector<int> out;
        for (std::size_t c = 0; c < num_classes_; ++c)
            if (ncm_.prototypes[c]) out.push_back(static_cast<int>(c));
        return out;
    }

    // One optimization step on the Eq. 6 objective plus the online prototype
    // update. Returns the loss breakdown and the wall-clock batch time.
    std::pair<LossBreakdown, double> train_step(const std::vector<Sample>& batch, std::size_t iteration) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<int> active = active_classes();
        std::vector<int> labels;
        for (const Sample& s : batch)
            if (std::find(active.begin(), active.end(), s.label) == active.end())
                active.push_back(s.label);
        std::sort(active.begin(), active.end());

        BatchGradients g = nsce_objective(batch, head_, adapter_, ncm_, cfg_.gamma, active);
        if (!std::isfinite(g.losses.total))
            throw TrainingError("non-finite training loss", iteration);

        opt_W_.update(head_.W.a, g.grad_W.a, cfg_.optim);
        opt_bias_.update(head_.bias, g.grad_bias, cfg_.optim);
        if (adapter_.enabled && !adapter_.frozen) {
            opt_W1_.update(adapter_.W1.a, g.grad_W1.a, cfg_.optim);
            opt_b1_.update(adapter_.b1, g.grad_b1, cfg_.optim);
        }

        std::vector<int> batch_labels;
        for (const Sample& s : batch) batch_labels.push_back(s.label);
        update_class_means(ncm_, g.representations, batch_labels);

        const auto t1 = std::chrono::steady_clock::now();
        const double batch_time = std::chrono::duration<double>(t1 - t0).count();
        return {g.losses, batch_time};
    }

    // Confusion-targeted replay: one update on L_b over per-pair balanced
    // batches, or a plain cross-entropy update when no confusion exceeds tau
    // (this fallback is also the plain-ER mode).
    std::vector<std::pair<int, int>> replay_step(MemoryBuffer& buffer, AccessPolicy& policy,
                                                 std::size_t iteration) {
        if (!may_access(policy, iteration))
            throw BufferError("replay_step without granted access at iteration " +
                              std::to_string(iteration));
        policy.accesses_used++;
        if (buffer.empty()) return {};

        std::vector<std::pair<int, int>> pairs;
        if (cfg_.targeted_replay) {
            const auto confusion = buffer_confusion(buffer, head_, adapter_, num_classes_);
            pairs = confused_pairs(confusion, cfg_.tau);
        }

        const auto count = static_cast<std::size_t>(policy.replay_batch_size);
        if (pairs.empty()) {
            const auto batch = buffer.draw(count);
            if (batch.empty()) return {};
            apply_plain_ce(batch, iteration);
            return {};
        }

        std::vector<Sample> batch;
        for (const auto& pr : pairs) {
            auto drawn = buffer.draw(count, pr);
            batch.insert(batch.end(), drawn.begin(), drawn.end());
        }
        if (batch.empty()) return pairs;
        apply_binary(batch, pairs, iteration);
        return pairs;
    }

    double last_lb() const { return last_lb_; }

  private:
    void apply_plain_ce(const std::vector<Sample>& batch, std::size_t iteration) {
        std::vector<Vec> logits;
        std::vector<int> labels;
        std::vector<Vec> reps, pre_acts;
        collect_forward(batch, logits, labels, reps, pre_acts);
        const CeResult ce = cross_entropy(logits, labels);
        if (!std::isfinite(ce.loss)) throw TrainingError("non-finite replay loss", iteration);
        last_lb_ = ce.loss;
        apply_logit_grads(batch, ce.grad_logits, reps, pre_acts);
    }

    void apply_binary(const std::vector<Sample>& batch, const std::vector<std::pair<int, int>>& pairs,
                      std::size_t iteration) {
        std::vector<Vec> logits;
        std::vector<int> labels;
        std::vector<Vec> reps, pre_acts;
        collect_forward(batch, logits, labels, reps, pre_acts);
        const BinaryLossResult lb = targeted_binary_loss(logits, labels, pairs, cfg_.pair_softmax);
        if (!std::isfinite(lb.loss)) throw TrainingError("non-finite replay loss", iteration);
        last_lb_ = lb.loss;
        apply_logit_grads(batch, lb.grad_logits, reps, pre_acts);
    }

    void collect_forward(const std::vector<Sample>& batch, std::vector<Vec>& logits,
                         std::vector<int>& labels, std::vector<Vec>& reps,
                         std::vector<Vec>& pre_acts) {
        for (const Sample& s : batch) {
            if (adapter_.enabled) pre_acts.push_back(adapter_.pre_activation(s.features));
            Vec rep = adapter_.forward(s.features);
            logits.push_back(affine_transpose(head_.W, head_.bias, rep));
            reps.push_back(std::move(rep));
            labels.push_back(s.label);
        }
    }

    void apply_logit_grads(const std::vector<Sample>& batch, const std::vector<Vec>& grad_logits,
                           const std::vector<Vec>& reps, const std::vector<Vec>& pre_acts) {
        Matrix grad_W(head_.W.rows, head_.W.cols);
        Vec grad_bias(head_.bias.size(), 0.0);
        Matrix grad_W1;
        Vec grad_b1;
        const bool train_adapter = adapter_.enabled && !adapter_.frozen;
        if (train_adapter) {
            grad_W1 = Matrix(adapter_.W1.rows, adapter_.W1.cols);
            grad_b1.assign(adapter_.b1.size(), 0.0);
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const Vec& g = grad_logits[i];
            for (std::size_t row = 0; row < head_.W.rows; ++row)
                for (std::size_t c = 0; c < head_.W.cols; ++c)
                    grad_W(row, c) += reps[i][row] * g[c];
            for (std::size_t c = 0; c < head_.W.cols; ++c) grad_bias[c] += g[c];
            if (train_adapter) {
                for (std::size_t h = 0; h < adapter_.W1.cols; ++h) {
                    if (pre_acts[i][h] <= 0.0) continue;
                    double gz = 0.0;
                    for (std::size_t c = 0; c < head_.W.cols; ++c)
                        gz += head_.W(h, c) * g[c];
                    grad_b1[h] += gz;
                    for (std::size_t row = 0; row < adapter_.W1.rows; ++row)
                        grad_W1(row, h) += batch[i].features[row] * gz;
                }
            }
        }
        opt_W_.update(head_.W.a, grad_W.a, cfg_.optim);
        opt_bias_.update(head_.bias, grad_bias, cfg_.optim);
        if (train_adapter) {
            opt_W1_.update(adapter_.W1.a, grad_W1.a, cfg_.optim);
            opt_b1_.update(adapter_.b1, grad_b1, cfg_.optim);
        }
    }

    TrainerConfig cfg_;
    std::size_t dim_;
    std::size_t num_classes_;
    LinearHead head_;
    AdapterHead adapter_;
    NcmState ncm_;
    LiteGate gate_;
    AdamWState opt_W_, opt_bias_, opt_W1_, opt_b1_;
    double last_lb_ = 0.0;
};

struct RunResult {
    RunLog log;
    Trainer trainer;
    std::size_t replay_steps = 0;
    AccessPolicy final_policy;
    std::string error;  // empty on success; log.complete mirrors this
};

// Full streaming loop: per drained batch — buffer update, freeze gate,
// train step, scheduled replay, periodic evaluation. Deterministic when
// fixed_v_m > 0.
inline RunResult run_training(const std::vector<Sample>& train, const std::vector<Sample>& eval_set,
                              std::size_t dim, std::size_t num_classes, const StreamConfig& stream_cfg,
                              const TrainerConfig& trainer_cfg, AccessPolicy policy,
                              std::size_t buffer_capacity) {
    RunResult result{RunLog{}, Trainer(dim, num_classes, trainer_cfg)};
    Trainer& trainer = result.trainer;
    RunLog& log = result.log;

    const TaskSchedule sched = effective_schedule(stream_cfg);
    const std::vector<Sample> stream = build_stream(stream_cfg, train);
    StreamCursor cursor(stream, stream_cfg, sched.tasks.size());
    MemoryBuffer buffer(buffer_capacity, trainer_cfg.seed + 0x9e3779b97f4a7c15ull);

    // checkpoint 0 = initial parameter distribution proxy
    log.task_checkpoints.push_back(flatten_params(trainer.head(), trainer.adapter()));

    double clock = 0.0;
    std::size_t iteration = 0;
    std::size_t samples_seen = 0;
    int current_task = 0;
    double acc_running = 0.0;
    bool acc_seen = false;
    double task_ce_sum = 0.0;
    std::size_t task_ce_count = 0;
    std::vector<double> batch_times;
    std::vector<bool> seen_class(num_classes, false);

    auto seen_eval_set = [&]() {
        std::vector<Sample> out;
        for (const Sample& s : eval_set)
            if (seen_class[static_cast<std::size_t>(s.label)]) out.push_back(s);
        return out;
    };
    auto record_eval = [&]() {
        const auto subset = seen_eval_set();
        if (subset.empty()) return;
        EvalRecord rec = evaluate(trainer.head(), trainer.adapter(), trainer.ncm(), subset, num_classes);
        rec.iteration = iteration;
        rec.samples_seen = samples_seen;
        rec.v_m_measured = trainer_cfg.fixed_v_m > 0.0
                               ? trainer_cfg.fixed_v_m
                               : (batch_times.empty() ? 0.0
                                                      : measure_throughput(batch_times, stream_cfg.batch_size));
        log.records.push_back(std::move(rec));
    };
    auto close_task = [&]() {
        log.task_mean_ce.push_back(task_ce_count ? task_ce_sum / static_cast<double>(task_ce_count) : 0.0);
        log.task_checkpoints.push_back(flatten_params(trainer.head(), trainer.adapter()));
        task_ce_sum = 0.0;
        task_ce_count = 0;
    };

    try {
        while (!cursor.exhausted()) {
            DrainResult drained = cursor.drain_batch(clock);
            if (drained.batch.empty()) break;
            clock = drained.effective_clock;

            const int task = slot_task(sched, drained.batch.front().arrival_index);
            if (task != current_task) {
                close_task();
                current_task = task;
                trainer.gate().reset();
                trainer.adapter().frozen = false;
                acc_running = 0.0;
                acc_seen = false;
            }

            buffer.update(drained.batch);
            for (const Sample& s : drained.batch) seen_class[static_cast<std::size_t>(s.label)] = true;

            if (trainer.gate().check(acc_running, trainer_cfg) && trainer.adapter().enabled)
                trainer.adapter().frozen = true;

            const auto [losses, batch_time] = trainer.train_step(drained.batch, iteration);
            (void)losses;
            batch_times.push_back(batch_time);
            ++iteration;
            samples_seen += drained.batch.size();
            task_ce_sum += losses.ce;
            task_ce_count++;

            // running current-task accuracy from NCM predictions (y*)
            std::size_t hits = 0, in_task = 0;
            for (const Sample& s : drained.batch) {
                if (s.task_id != current_task) continue;
                ++in_task;
                const Vec rep = trainer.adapter().forward(s.features);
                if (ncm_predict(trainer.ncm(), rep) == s.label) ++hits;
            }
            if (in_task > 0) {
                const double acc = static_cast<double>(hits) / static_cast<double>(in_task);
                acc_running = acc_seen
                                  ? trainer_cfg.acc_decay * acc_running + (1.0 - trainer_cfg.acc_decay) * acc
                                  : acc;
                acc_seen = true;
            }

            if (may_access(policy, iteration)) {
                trainer.replay_step(buffer, policy, iteration);
                ++result.replay_steps;
            }

            if (iteration % trainer_cfg.eval_interval == 0) record_eval();

            if (trainer_cfg.fixed_v_m > 0.0)
                clock += static_cast<double>(drained.batch.size()) / trainer_cfg.fixed_v_m;
            else
                clock += batch_time;
        }

        close_task();
        if (log.records.empty() || log.records.back().iteration != iteration) record_eval();
        log.complete = true;
    } catch (const std::exception& e) {
        result.error = e.what();
        log.complete = false;
    }

    log.throughput = cursor.records();
    const double v_m = trainer_cfg.fixed_v_m > 0.0
                           ? trainer_cfg.fixed_v_m
                           : (batch_times.empty() ? 0.0 : measure_throughput(batch_times, stream_cfg.batch_size));
    for (ThroughputRecord& rec : log.throughput) rec.measured_v_m = v_m;
    for (const ThroughputRecord& rec : log.throughput) {
        log.task_processed.push_back(rec.processed);
    }
    result.final_policy = policy;
    return result;
}

}  // namespace nsce
