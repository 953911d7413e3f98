#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsce/math.hpp"

namespace nsce {

// One labeled feature vector, the atomic stream element.
struct Sample {
    Vec features;
    int label = 0;
    int task_id = 0;
    std::size_t arrival_index = 0;
    double arrival_time = 0.0;  // seconds, assigned by the stream builder
};

struct Dataset {
    std::vector<Sample> samples;
    std::size_t dim = 0;
    std::size_t num_classes = 0;
};

class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<float> read_f32(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature file: " + path.string());
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(in.gcount()) != count * 4)
        throw DataError("feature file shorter than declared shape: " + path.string());
    return buf;
}

inline std::vector<std::uint32_t> read_u32(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open label file: " + path.string());
    std::vector<std::uint32_t> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(in.gcount()) != count * 4)
        throw DataError("label file shorter than declared shape: " + path.string());
    return buf;
}

}  // namespace detail

// CSV with header f0..f{d-1},label
inline Dataset load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open csv: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty csv: " + path.string());
    const std::size_t dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    Dataset ds;
    ds.dim = dim;
    int max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Sample s;
        s.features.reserve(dim);
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t i = 0; i < dim; ++i) {
            if (!std::getline(ss, cell, ',')) throw DataError("csv row shorter than header");
            double v = std::stod(cell);
            if (!std::isfinite(v)) throw DataError("non-finite feature value in csv");
            s.features.push_back(v);
        }
        if (!std::getline(ss, cell, ',')) throw DataError("csv row missing label");
        s.label = std::stoi(cell);
        max_label = std::max(max_label, s.label);
        ds.samples.push_back(std::move(s));
    }
    ds.num_classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

// JSON manifest {n, d, C, feature_file, label_file}; payload is little-endian
// float32 row-major n x d plus uint32 labels.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    if (manifest_path.extension() == ".csv") return load_csv(manifest_path);
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    in >> j;
    const std::size_t n = j.at("n").get<std::size_t>();
    const std::size_t d = j.at("d").get<std::size_t>();
    const std::size_t c = j.at("C").get<std::size_t>();
    const auto dir = manifest_path.parent_path();
    const auto feature_path = dir / j.at("feature_file").get<std::string>();
    const auto label_path = dir / j.at("label_file").get<std::string>();

    {  // reject payloads whose byte length disagrees with (n, d)
        std::error_code ec;
        const auto bytes = std::filesystem::file_size(feature_path, ec);
        if (!ec && bytes != n * d * 4)
            throw DataError("feature payload size mismatch: expected " + std::to_string(n * d * 4) +
                            " bytes, found " + std::to_string(bytes));
    }

    const auto feats = detail::read_f32(feature_path, n * d);
    const auto labels = detail::read_u32(label_path, n);

    Dataset ds;
    ds.dim = d;
    ds.num_classes = c;
    ds.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample& s = ds.samples[i];
        s.features.resize(d);
        for (std::size_t k = 0; k < d; ++k) {
            const float v = feats[i * d + k];
            if (!std::isfinite(v)) throw DataError("non-finite feature value at row " + std::to_string(i));
            s.features[k] = v;
        }
        if (labels[i] >= c) throw DataError("label out of range at row " + std::to_string(i));
        s.label = static_cast<int>(labels[i]);
        s.arrival_index = i;
    }
    return ds;
}

inline void write_dataset(const std::filesystem::path& manifest_path, const Dataset& ds) {
    const auto dir = manifest_path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    const std::string stem = manifest_path.stem().string();
    const std::string feature_file = stem + ".features.f32";
    const std::string label_file = stem + ".labels.u32";

    std::ofstream ff(dir / feature_file, std::ios::binary);
    std::ofstream lf(dir / label_file, std::ios::binary);
    if (!ff || !lf) throw DataError("cannot write dataset payload");
    for (const Sample& s : ds.samples) {
        for (double v : s.features) {
            const float f = static_cast<float>(v);
            ff.write(reinterpret_cast<const char*>(&f), 4);
        }
        const std::uint32_t y = static_cast<std::uint32_t>(s.label);
        lf.write(reinterpret_cast<const char*>(&y), 4);
    }
    nlohmann::json j{{"n", ds.samples.size()},
                     {"d", ds.dim},
                     {"C", ds.num_classes},
                     {"feature_file", feature_file},
                     {"label_file", label_file}};
    std::ofstream mf(manifest_path);
    if (!mf) throw DataError("cannot write manifest");
    mf << j.dump(2) << "\n";
}

// Deterministic per-class holdout. Returns {train, eval}; eval gets
// round(fraction * class count) samples of each class.
inline std::pair<std::vector<Sample>, std::vector<Sample>> split_eval(
    const std::vector<Sample>& samples, std::size_t num_classes, double fraction, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < samples.size(); ++i)
        by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
    Rng rng(seed);
    std::vector<bool> held(samples.size(), false);
    for (auto& idx : by_class) {
        rng.shuffle(idx);
        const std::size_t k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < k; ++i) held[idx[i]] = true;
    }
    std::vector<Sample> train, eval;
    for (std::size_t i = 0; i < samples.size(); ++i)
        (held[i] ? eval : train).push_back(samples[i]);
    return {std::move(train), std::move(eval)};
}

}  // namespace nsce
