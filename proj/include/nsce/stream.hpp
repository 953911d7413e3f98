#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "nsce/data.hpp"
#include "nsce/math.hpp"

namespace nsce {

struct TaskSpec {
    std::vector<int> classes;
    std::size_t count = 0;     // N_t, samples emitted for this task
    double duration = 1.0;     // seconds the task occupies on the wire
};

struct TaskSchedule {
    std::vector<TaskSpec> tasks;
    double overlap_fraction = 0.10;  // cross-task mixing probability inside boundary windows
};

enum class StreamMode { single_task, class_incremental, domain_incremental };

struct StreamConfig {
    TaskSchedule schedule;
    double flow_rate = 100.0;  // v_s, samples per second
    int batch_size = 10;
    std::uint64_t seed = 0;
    StreamMode mode = StreamMode::class_incremental;
};

struct ThroughputRecord {
    int task_id = 0;
    std::size_t arrived = 0;
    std::size_t processed = 0;
    std::size_t skipped = 0;
    double measured_v_m = 0.0;
};

class StreamError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Builds the ordered stream. Samples are task-ordered; inside the boundary
// window between tasks t and t+1 (last 5% of t, first 5% of t+1), slot
// contents are swapped across the boundary with probability overlap_fraction.
// Arrival timestamp of the k-th emitted sample is k / v_s.
// Schedule actually used on the wire: single_task mode flattens every class
// into one task with uniform class probability.
inline TaskSchedule effective_schedule(const StreamConfig& cfg) {
    if (cfg.mode != StreamMode::single_task) return cfg.schedule;
    TaskSpec all;
    std::size_t total = 0;
    double total_dur = 0.0;
    for (const TaskSpec& t : cfg.schedule.tasks) {
        for (int c : t.classes)
            if (std::find(all.classes.begin(), all.classes.end(), c) == all.classes.end())
                all.classes.push_back(c);
        total += t.count;
        total_dur += t.duration;
    }
    all.count = total;
    all.duration = total_dur;
    TaskSchedule sched = cfg.schedule;
    sched.tasks = {all};
    return sched;
}

// Maps an emission slot (arrival index) to the task owning that slot.
inline int slot_task(const TaskSchedule& sched, std::size_t arrival_index) {
    std::size_t cum = 0;
    for (std::size_t t = 0; t < sched.tasks.size(); ++t) {
        cum += sched.tasks[t].count;
        if (arrival_index < cum) return static_cast<int>(t);
    }
    return static_cast<int>(sched.tasks.size()) - 1;
}

inline std::vector<Sample> build_stream(const StreamConfig& cfg, const std::vector<Sample>& samples) {
    Rng rng(cfg.seed);

    std::map<int, std::vector<std::size_t>> pools;  // class -> shuffled sample indices
    for (std::size_t i = 0; i < samples.size(); ++i) pools[samples[i].label].push_back(i);
    for (auto& [cls, idx] : pools) rng.shuffle(idx);

    const TaskSchedule sched = effective_schedule(cfg);

    for (const TaskSpec& t : sched.tasks) {
        if (t.classes.empty()) throw StreamError("task with empty class set");
        for (int c : t.classes)
            if (!pools.count(c)) throw StreamError("schedule references absent class " + std::to_string(c));
    }

    std::map<int, std::size_t> used;  // class -> pool cursor
    std::vector<std::vector<Sample>> per_task;
    for (std::size_t t = 0; t < sched.tasks.size(); ++t) {
        const TaskSpec& spec = sched.tasks[t];
        std::vector<Sample> emitted;
        emitted.reserve(spec.count);
        for (std::size_t k = 0; k < spec.count; ++k) {
            // uniform over the task's classes that still have samples left
            std::vector<int> available;
            for (int c : spec.classes)
                if (used[c] < pools[c].size()) available.push_back(c);
            if (available.empty())
                throw StreamError("task " + std::to_string(t) + " ran out of samples while building stream");
            const int cls = available[rng.index(available.size())];
            std::size_t& cur = used[cls];
            Sample s = samples[pools[cls][cur++]];
            s.task_id = static_cast<int>(t);
            emitted.push_back(std::move(s));
        }
        per_task.push_back(std::move(emitted));
    }

    // blurry boundaries: swap slots across each adjacent-task window
    if (sched.overlap_fraction > 0.0) {
        for (std::size_t t = 0; t + 1 < per_task.size(); ++t) {
            auto& left = per_task[t];
            auto& right = per_task[t + 1];
            const std::size_t wl = static_cast<std::size_t>(
                std::ceil(0.05 * static_cast<double>(left.size())));
            const std::size_t wr = static_cast<std::size_t>(
                std::ceil(0.05 * static_cast<double>(right.size())));
            if (wl == 0 || wr == 0) continue;
            for (std::size_t k = left.size() - wl; k < left.size(); ++k) {
                if (rng.bernoulli(cfg.schedule.overlap_fraction)) {
                    const std::size_t partner = rng.index(wr);
                    std::swap(left[k], right[partner]);
                }
            }
        }
    }

    std::vector<Sample> stream;
    for (auto& chunk : per_task)
        for (Sample& s : chunk) stream.push_back(std::move(s));
    for (std::size_t k = 0; k < stream.size(); ++k) {
        stream[k].arrival_index = k;
        stream[k].arrival_time = static_cast<double>(k) / cfg.flow_rate;
    }
    return stream;
}

struct DrainResult {
    std::vector<Sample> batch;
    std::size_t skipped = 0;
    double effective_clock = 0.0;  // wall clock after any wait for arrivals
};

// Single-owner cursor over a built stream. Enforces the skipping semantics:
// once the backlog of arrived-but-unprocessed samples exceeds one batch,
// the oldest are dropped. If fewer than batch_size samples have arrived,
// the cursor waits (advances the effective clock) for a full batch.
class StreamCursor {
  public:
    StreamCursor(const std::vector<Sample>& stream, const StreamConfig& cfg, std::size_t num_tasks)
        : stream_(&stream), cfg_(cfg) {
        records_.resize(std::max<std::size_t>(num_tasks, 1));
        for (std::size_t t = 0; t < records_.size(); ++t) records_[t].task_id = static_cast<int>(t);
    }

    bool exhausted() const { return next_ >= stream_->size(); }

    DrainResult drain_batch(double wall_clock) {
        DrainResult out;
        out.effective_clock = wall_clock;
        const auto& s = *stream_;
        const std::size_t n = s.size();
        if (next_ >= n) return out;

        const std::size_t batch = static_cast<std::size_t>(cfg_.batch_size);
        const std::size_t want_last = std::min(next_ + batch, n) - 1;
        const double t_eff = std::max(wall_clock, s[want_last].arrival_time);
        out.effective_clock = t_eff;

        std::size_t arrived = static_cast<std::size_t>(std::floor(t_eff * cfg_.flow_rate + 1e-9)) + 1;
        arrived = std::min(arrived, n);
        std::size_t pending = arrived - next_;

        if (pending > batch) {
            const std::size_t drop = pending - batch;
            for (std::size_t i = 0; i < drop; ++i) record(next_ + i).skipped++;
            for (std::size_t i = 0; i < drop; ++i) record(next_ + i).arrived++;
            next_ += drop;
            out.skipped = drop;
            pending = batch;
        }
        for (std::size_t i = 0; i < pending; ++i) {
            record(next_).arrived++;
            record(next_).processed++;
            out.batch.push_back(s[next_]);
            ++next_;
        }
        return out;
    }

    const std::vector<ThroughputRecord>& records() const { return records_; }
    std::vector<ThroughputRecord>& records() { return records_; }

  private:
    ThroughputRecord& record(std::size_t stream_index) {
        const int t = (*stream_)[stream_index].task_id;
        return records_[static_cast<std::size_t>(t)];
    }

    const std::vector<Sample>* stream_;
    StreamConfig cfg_;
    std::size_t next_ = 0;
    std::vector<ThroughputRecord> records_;
};

}  // namespace nsce
