#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsce/buffer.hpp"
#include "nsce/data.hpp"
#include "nsce/metrics.hpp"
#include "nsce/pacbayes.hpp"
#include "nsce/stream.hpp"
#include "nsce/synthetic.hpp"
#include "nsce/trainer.hpp"

namespace nsce {

using nlohmann::json;

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct PacBayesConfig {
    double loss_bound = 10.0;  // K
    double lambda = 1.0;
    double delta = 0.05;
    double sigma = 0.1;  // posterior proxy width
    bool half_factor = true;
};

struct ExperimentSpec {
    json config;  // fully merged configuration; single source of truth
};

// Dotted-path override, e.g. set_path(j, "trainer.gamma", 0.01).
inline void set_path(json& j, const std::string& path, const json& value) {
    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dotpos = path.find('.', start);
        const std::string key = path.substr(start, dotpos - start);
        if (dotpos == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dotpos + 1;
    }
}

inline json get_path(const json& j, const std::string& path) {
    const json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dotpos = path.find('.', start);
        const std::string key = path.substr(start, dotpos - start);
        if (!cur->contains(key)) throw ConfigError("unknown config key: " + path);
        cur = &(*cur)[key];
        if (dotpos == std::string::npos) return *cur;
        start = dotpos + 1;
    }
}

namespace detail {

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

inline StreamMode parse_mode(const std::string& s) {
    if (s == "single_task") return StreamMode::single_task;
    if (s == "class_incremental") return StreamMode::class_incremental;
    if (s == "domain_incremental") return StreamMode::domain_incremental;
    throw ConfigError("unknown stream mode: " + s);
}

inline StreamConfig parse_stream_config(const json& j, std::size_t num_classes,
                                        std::size_t train_size) {
    StreamConfig cfg;
    cfg.flow_rate = detail::get_or<double>(j, "flow_rate", 100.0);
    cfg.batch_size = detail::get_or<int>(j, "batch_size", 10);
    cfg.mode = parse_mode(detail::get_or<std::string>(j, "mode", "class_incremental"));
    cfg.schedule.overlap_fraction = detail::get_or<double>(j, "overlap_fraction", 0.10);
    if (cfg.flow_rate <= 0.0 || cfg.batch_size < 1)
        throw ConfigError("stream: flow_rate must be positive, batch_size >= 1");

    if (j.contains("tasks")) {
        for (const auto& tj : j.at("tasks")) {
            TaskSpec t;
            t.classes = tj.at("classes").get<std::vector<int>>();
            t.count = tj.at("count").get<std::size_t>();
            t.duration = tj.contains("duration")
                             ? tj.at("duration").get<double>()
                             : static_cast<double>(t.count) / cfg.flow_rate;
            cfg.schedule.tasks.push_back(std::move(t));
        }
    } else {
        // evenly partition classes into tasks of classes_per_task
        const auto per_task = detail::get_or<std::size_t>(j, "classes_per_task", num_classes);
        const std::size_t num_tasks = (num_classes + per_task - 1) / per_task;
        const std::size_t count =
            detail::get_or<std::size_t>(j, "count_per_task", train_size / std::max<std::size_t>(num_tasks, 1));
        for (std::size_t t = 0; t < num_tasks; ++t) {
            TaskSpec spec;
            for (std::size_t c = t * per_task; c < std::min((t + 1) * per_task, num_classes); ++c)
                spec.classes.push_back(static_cast<int>(c));
            spec.count = count;
            spec.duration = static_cast<double>(count) / cfg.flow_rate;
            cfg.schedule.tasks.push_back(std::move(spec));
        }
    }
    for (const TaskSpec& t : cfg.schedule.tasks)
        if (t.count == 0 || t.duration <= 0.0) throw ConfigError("stream: task counts and durations must be positive");
    return cfg;
}

inline TrainerConfig parse_trainer_config(const json& j) {
    TrainerConfig cfg;
    cfg.gamma = detail::get_or<double>(j, "gamma", 0.01);
    cfg.tau = detail::get_or<double>(j, "tau", 0.2);
    cfg.optim.learning_rate = detail::get_or<double>(j, "learning_rate", 1e-3);
    cfg.optim.weight_decay = detail::get_or<double>(j, "weight_decay", 1e-4);
    cfg.optim.beta1 = detail::get_or<double>(j, "beta1", 0.9);
    cfg.optim.beta2 = detail::get_or<double>(j, "beta2", 0.999);
    cfg.optim.eps = detail::get_or<double>(j, "eps", 1e-8);
    cfg.lite_mode = detail::get_or<bool>(j, "lite_mode", false);
    cfg.lite_threshold = detail::get_or<double>(j, "lite_threshold", 0.9);
    cfg.lite_latch = detail::get_or<bool>(j, "lite_latch", true);
    cfg.ncm_momentum = detail::get_or<double>(j, "ncm_momentum", 0.1);
    cfg.acc_decay = detail::get_or<double>(j, "acc_decay", 0.9);
    cfg.eval_interval = detail::get_or<std::size_t>(j, "eval_interval", 100);
    cfg.targeted_replay = detail::get_or<bool>(j, "targeted_replay", true);
    cfg.pair_softmax = detail::get_or<bool>(j, "pair_softmax", true);
    cfg.adapter_hidden = detail::get_or<std::size_t>(j, "adapter_hidden", 0);
    cfg.fixed_v_m = detail::get_or<double>(j, "fixed_v_m", 200.0);
    if (cfg.gamma < 0.0 || cfg.tau <= 0.0 || cfg.tau >= 1.0 || cfg.optim.learning_rate <= 0.0)
        throw ConfigError("trainer: require gamma >= 0, tau in (0,1), learning_rate > 0");
    return cfg;
}

inline SyntheticSpec parse_synthetic(const json& j) {
    SyntheticSpec spec;
    spec.num_classes = detail::get_or<std::size_t>(j, "classes", 2);
    spec.dim = detail::get_or<std::size_t>(j, "dim", 2);
    spec.separation = detail::get_or<double>(j, "separation", 1.0);
    spec.sigma = detail::get_or<double>(j, "sigma", 0.1);
    spec.per_class = detail::get_or<std::size_t>(j, "per_class", 100);
    spec.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    if (j.contains("confusable_pairs"))
        for (const auto& p : j.at("confusable_pairs"))
            spec.confusable_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>(),
                                               p.at(2).get<double>());
    return spec;
}

inline PacBayesConfig parse_pacbayes(const json& j) {
    PacBayesConfig cfg;
    cfg.loss_bound = detail::get_or<double>(j, "K", 10.0);
    cfg.lambda = detail::get_or<double>(j, "lambda", 1.0);
    cfg.delta = detail::get_or<double>(j, "delta", 0.05);
    cfg.sigma = detail::get_or<double>(j, "sigma", 0.1);
    cfg.half_factor = detail::get_or<bool>(j, "half_factor", true);
    return cfg;
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline json eval_record_json(const EvalRecord& rec) {
    return json{{"iteration", rec.iteration},
                {"samples_seen", rec.samples_seen},
                {"accuracy_softmax", rec.accuracy_softmax},
                {"accuracy_ncm", rec.accuracy_ncm},
                {"per_class_s", rec.per_class_s},
                {"per_class_m", rec.per_class_m},
                {"v_m", rec.v_m_measured},
                {"confusion", rec.confusion}};
}

inline void write_run_log(const std::filesystem::path& dir, const RunResult& result, double delta_n) {
    std::filesystem::create_directories(dir);
    const RunLog& log = result.log;
    {
        std::ofstream out(dir / "run.jsonl");
        for (const EvalRecord& rec : log.records) out << eval_record_json(rec).dump() << "\n";
        json tail{{"type", "summary"},
                  {"complete", log.complete},
                  {"replay_steps", result.replay_steps},
                  {"accesses_used", result.final_policy.accesses_used}};
        if (!log.records.empty()) {
            tail["a_auc"] = a_auc(log.records);
            tail["a_auc_raw"] = a_auc_raw(log.records, delta_n);
            tail["last_accuracy"] = last_accuracy(log.records);
        }
        json tp = json::array();
        for (const ThroughputRecord& rec : log.throughput)
            tp.push_back(json{{"task", rec.task_id},
                              {"arrived", rec.arrived},
                              {"processed", rec.processed},
                              {"skipped", rec.skipped},
                              {"v_m", rec.measured_v_m}});
        tail["throughput"] = tp;
        if (!result.error.empty()) tail["error"] = result.error;
        out << tail.dump() << "\n";
    }
    {
        std::ofstream csv(dir / "run.csv");
        csv << "iteration,accuracy_softmax,accuracy_ncm,mean_s,v_m\n";
        for (const EvalRecord& rec : log.records) {
            double mean_s = 0.0;
            for (double v : rec.per_class_s) mean_s += v;
            if (!rec.per_class_s.empty()) mean_s /= static_cast<double>(rec.per_class_s.size());
            csv << rec.iteration << ',' << format_double(rec.accuracy_softmax) << ','
                << format_double(rec.accuracy_ncm) << ',' << format_double(mean_s) << ','
                << format_double(rec.v_m_measured) << "\n";
        }
    }
    save_heads(dir / "head.json", result.trainer.head(), result.trainer.adapter(),
               result.trainer.config().seed);
}

inline BoundTerms run_bound_terms(const RunLog& log, const PacBayesConfig& cfg, BoundInputs* echo = nullptr) {
    BoundInputs in;
    in.loss_bound = cfg.loss_bound;
    in.lambda = cfg.lambda;
    in.delta = cfg.delta;
    in.half_factor = cfg.half_factor;
    for (std::size_t t = 0; t < log.task_mean_ce.size(); ++t) {
        const double m_t = t < log.task_processed.size()
                               ? std::max<double>(1.0, static_cast<double>(log.task_processed[t]))
                               : 1.0;
        in.samples_per_task.push_back(m_t);
        in.empirical_risk.push_back(log.task_mean_ce[t]);
        const double kl = t + 1 < log.task_checkpoints.size()
                              ? gaussian_kl(log.task_checkpoints[t + 1], log.task_checkpoints[t], cfg.sigma)
                              : 0.0;
        in.kl.push_back(kl);
    }
    if (echo) *echo = in;
    return bound_terms(in);
}

struct RunOutcome {
    std::string sweep_point;
    std::uint64_t seed = 0;
    bool complete = false;
    double a_auc_value = 0.0;
    double last_acc = 0.0;
    double mean_s = 0.0;
    double v_m = 0.0;
    std::size_t processed = 0;
    std::size_t skipped = 0;
    BoundTerms bound;
};

// Executes one (sweep point, seed) run from a fully merged config.
inline RunOutcome execute_single(const json& cfg, std::uint64_t seed, const std::string& sweep_label,
                                 const std::filesystem::path& out_dir) {
    Dataset ds;
    if (cfg.contains("dataset")) {
        ds = load_dataset(cfg.at("dataset").at("manifest").get<std::string>());
    } else if (cfg.contains("synthetic")) {
        SyntheticSpec spec = parse_synthetic(cfg.at("synthetic"));
        ds = generate_synthetic(spec);
    } else {
        throw ConfigError("config needs either a dataset manifest or a synthetic spec");
    }

    const double eval_fraction = detail::get_or<double>(cfg, "eval_fraction", 0.2);
    auto [train, eval_set] = split_eval(ds.samples, ds.num_classes, eval_fraction, seed ^ 0xda7a5e7u);

    StreamConfig stream_cfg = parse_stream_config(cfg.value("stream", json::object()), ds.num_classes,
                                                  train.size());
    stream_cfg.seed = seed;
    TrainerConfig trainer_cfg = parse_trainer_config(cfg.value("trainer", json::object()));
    trainer_cfg.seed = seed;

    AccessPolicy policy;
    const json rj = cfg.value("replay", json::object());
    policy.every_k = detail::get_or<std::size_t>(rj, "every_k", 100);
    policy.replay_batch_size = detail::get_or<int>(rj, "batch_size", 10);
    const auto buffer_capacity = detail::get_or<std::size_t>(cfg, "buffer_capacity", 100);

    RunResult result = run_training(train, eval_set, ds.dim, ds.num_classes, stream_cfg, trainer_cfg,
                                    policy, buffer_capacity);

    const double delta_n = static_cast<double>(trainer_cfg.eval_interval * stream_cfg.batch_size);
    write_run_log(out_dir, result, delta_n);

    RunOutcome outcome;
    outcome.sweep_point = sweep_label;
    outcome.seed = seed;
    outcome.complete = result.log.complete;
    if (!result.log.records.empty()) {
        outcome.a_auc_value = a_auc(result.log.records);
        outcome.last_acc = last_accuracy(result.log.records);
        const auto& s = result.log.records.back().per_class_s;
        for (double v : s) outcome.mean_s += v;
        if (!s.empty()) outcome.mean_s /= static_cast<double>(s.size());
        outcome.v_m = result.log.records.back().v_m_measured;
    }
    for (const ThroughputRecord& rec : result.log.throughput) {
        outcome.processed += rec.processed;
        outcome.skipped += rec.skipped;
    }
    outcome.bound = run_bound_terms(result.log, parse_pacbayes(cfg.value("pacbayes", json::object())));
    return outcome;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return {mean, std::sqrt(var)};
}

// Runs (seed x sweep point), writes <out>/<sweep>/<seed>/run.jsonl,
// <out>/summary.csv and <out>/pacbayes.json. Returns 0 iff every run
// completed.
inline int run_experiment(const ExperimentSpec& spec) {
    const json& cfg = spec.config;
    const std::filesystem::path out = cfg.value("out", "out");
    std::filesystem::create_directories(out);

    std::vector<std::uint64_t> seeds = detail::get_or<std::vector<std::uint64_t>>(cfg, "seeds", {0});
    if (seeds.empty()) throw ConfigError("seed list must be nonempty");

    // cartesian product of sweep axes
    std::vector<std::pair<std::string, json>> points;  // label -> overrides {path: value}
    points.emplace_back("base", json::object());
    if (cfg.contains("sweep")) {
        for (const auto& [path, values] : cfg.at("sweep").items()) {
            (void)get_path(cfg, path);  // validate the axis references a real key
            std::vector<std::pair<std::string, json>> expanded;
            const std::string leaf = path.substr(path.find_last_of('.') + 1);
            for (const auto& [label, overrides] : points) {
                for (const auto& v : values) {
                    json o = overrides;
                    o[path] = v;
                    std::string vs = v.dump();
                    std::erase(vs, '"');
                    expanded.emplace_back(label == "base" ? leaf + "=" + vs
                                                          : label + "_" + leaf + "=" + vs,
                                          std::move(o));
                }
            }
            points = std::move(expanded);
        }
    }

    bool all_complete = true;
    std::ofstream summary(out / "summary.csv");
    summary << "sweep_point,seeds,a_auc_mean,a_auc_std,last_acc_mean,last_acc_std,"
               "mean_s_mean,v_m_mean,processed_mean,skipped_mean,bound_total_mean\n";
    json pacbayes_report = json::object();
    pacbayes_report["note"] =
        "divergence term uses an isotropic Gaussian posterior proxy centered at parameter checkpoints";

    for (const auto& [label, overrides] : points) {
        json merged = cfg;
        for (const auto& [path, value] : overrides.items()) set_path(merged, path, value);

        std::vector<double> aucs, lasts, mean_ss, vms, processed, skipped, bounds;
        json point_report = json::array();
        for (std::uint64_t seed : seeds) {
            const auto dir = out / label / std::to_string(seed);
            const RunOutcome o = execute_single(merged, seed, label, dir);
            all_complete = all_complete && o.complete;
            aucs.push_back(o.a_auc_value);
            lasts.push_back(o.last_acc);
            mean_ss.push_back(o.mean_s);
            vms.push_back(o.v_m);
            processed.push_back(static_cast<double>(o.processed));
            skipped.push_back(static_cast<double>(o.skipped));
            bounds.push_back(o.bound.total);
            point_report.push_back(json{{"seed", seed},
                                        {"empirical_risk", o.bound.empirical_risk},
                                        {"throughput_term", o.bound.throughput},
                                        {"divergence_term", o.bound.divergence},
                                        {"constant_term", o.bound.constant},
                                        {"total", o.bound.total}});
        }
        const auto [auc_m, auc_s] = mean_std(aucs);
        const auto [last_m, last_s] = mean_std(lasts);
        summary << label << ',' << seeds.size() << ',' << format_double(auc_m) << ','
                << format_double(auc_s) << ',' << format_double(last_m) << ','
                << format_double(last_s) << ',' << format_double(mean_std(mean_ss).first) << ','
                << format_double(mean_std(vms).first) << ','
                << format_double(mean_std(processed).first) << ','
                << format_double(mean_std(skipped).first) << ','
                << format_double(mean_std(bounds).first) << "\n";
        pacbayes_report[label] = point_report;
    }
    std::ofstream pb(out / "pacbayes.json");
    pb << pacbayes_report.dump(2) << "\n";
    return all_complete ? 0 : 1;
}

}  // namespace nsce
