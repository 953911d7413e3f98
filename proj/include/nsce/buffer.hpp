#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "nsce/data.hpp"
#include "nsce/math.hpp"

namespace nsce {

class BufferError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Replay-frequency budget: one buffer access per k training iterations.
struct AccessPolicy {
    std::size_t every_k = 100;       // Freq = 1/k
    int replay_batch_size = 10;
    std::size_t accesses_used = 0;
};

inline bool may_access(const AccessPolicy& policy, std::size_t iteration) {
    return iteration > 0 && iteration % policy.every_k == 0;
}

// Bounded reservoir of past samples. Classic reservoir sampling: after
// seen_count offers, each offered sample resides in the buffer with
// probability capacity / seen_count.
class MemoryBuffer {
  public:
    MemoryBuffer(std::size_t capacity, std::uint64_t rng_seed)
        : capacity_(capacity), rng_(rng_seed) {}

    void update(const std::vector<Sample>& batch) {
        for (const Sample& s : batch) {
            ++seen_;
            if (contents_.size() < capacity_) {
                contents_.push_back(s);
            } else {
                const std::size_t j = rng_.index(seen_);
                if (j < capacity_) contents_[j] = s;
            }
        }
    }

    // Up to replay_batch_size samples, uniform without replacement. With a
    // class-pair filter, only labels in {m, n}, round-robin balanced while
    // both classes have samples left, then filled from the remaining class.
    std::vector<Sample> sample_for_replay(AccessPolicy& policy, std::size_t iteration,
                                          std::optional<std::pair<int, int>> class_pair_filter = {}) {
        if (!may_access(policy, iteration))
            throw BufferError("buffer access denied at iteration " + std::to_string(iteration));
        policy.accesses_used++;
        return draw(static_cast<std::size_t>(policy.replay_batch_size), class_pair_filter);
    }

    std::vector<Sample> draw(std::size_t count, std::optional<std::pair<int, int>> filter = {}) {
        if (!filter) {
            std::vector<std::size_t> idx(contents_.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            rng_.shuffle(idx);
            std::vector<Sample> out;
            for (std::size_t i = 0; i < std::min(count, idx.size()); ++i)
                out.push_back(contents_[idx[i]]);
            return out;
        }
        const auto [m, n] = *filter;
        std::vector<std::size_t> of_m, of_n;
        for (std::size_t i = 0; i < contents_.size(); ++i) {
            if (contents_[i].label == m) of_m.push_back(i);
            else if (contents_[i].label == n) of_n.push_back(i);
        }
        rng_.shuffle(of_m);
        rng_.shuffle(of_n);
        std::vector<Sample> out;
        std::size_t im = 0, in = 0;
        while (out.size() < count && (im < of_m.size() || in < of_n.size())) {
            if (im < of_m.size()) out.push_back(contents_[of_m[im++]]);
            if (out.size() < count && in < of_n.size()) out.push_back(contents_[of_n[in++]]);
        }
        return out;
    }

    const std::vector<Sample>& contents() const { return contents_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t seen_count() const { return seen_; }
    bool empty() const { return contents_.empty(); }

    // Checkpoint mirrors the dataset format: JSON manifest + f32/u32 payload,
    // plus the reservoir counters and RNG state needed to resume.
    void save(const std::filesystem::path& manifest_path, std::size_t dim) const {
        Dataset ds;
        ds.dim = dim;
        ds.num_classes = 0;
        for (const Sample& s : contents_)
            ds.num_classes = std::max<std::size_t>(ds.num_classes, static_cast<std::size_t>(s.label) + 1);
        ds.samples = contents_;
        write_dataset(manifest_path, ds);

        std::ifstream mi(manifest_path);
        nlohmann::json j;
        mi >> j;
        mi.close();
        std::ostringstream state;
        state << rng_.engine;
        j["capacity"] = capacity_;
        j["seen_count"] = seen_;
        std::vector<int> tasks;
        for (const Sample& s : contents_) tasks.push_back(s.task_id);
        j["task_ids"] = tasks;
        j["rng_state"] = state.str();
        std::ofstream mo(manifest_path);
        mo << j.dump(2) << "\n";
    }

    static MemoryBuffer load(const std::filesystem::path& manifest_path) {
        std::ifstream mi(manifest_path);
        if (!mi) throw BufferError("cannot open buffer checkpoint: " + manifest_path.string());
        nlohmann::json j;
        mi >> j;
        MemoryBuffer buf(j.at("capacity").get<std::size_t>(), 0);
        Dataset ds = load_dataset(manifest_path);
        buf.contents_ = std::move(ds.samples);
        const auto tasks = j.at("task_ids").get<std::vector<int>>();
        for (std::size_t i = 0; i < buf.contents_.size() && i < tasks.size(); ++i)
            buf.contents_[i].task_id = tasks[i];
        buf.seen_ = j.at("seen_count").get<std::size_t>();
        std::istringstream state(j.at("rng_state").get<std::string>());
        state >> buf.rng_.engine;
        return buf;
    }

  private:
    std::size_t capacity_;
    std::vector<Sample> contents_;
    std::size_t seen_ = 0;
    Rng rng_;
};

}  // namespace nsce
