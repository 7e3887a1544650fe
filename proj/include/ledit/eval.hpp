#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ledit/rng.hpp"
#include "ledit/tensor.hpp"

namespace ledit {

/// mean |a-b| (order 1) or mean (a-b)^2 (order 2).
inline double pixel_distance(const Tensor& a, const Tensor& b, int order) {
    require_same_shape(a, b, "pixel_distance");
    if (order != 1 && order != 2) throw ConfigError("pixel_distance: order must be 1 or 2");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += order == 1 ? std::fabs(d) : d * d;
    }
    return s / static_cast<double>(a.numel());
}

enum class FeatureExtractor { image_analog, prompt_analog };

/// Fixed random linear projection into a shared 32-d feature space. The
/// weights depend only on the extractor tag and the input size, so the same
/// inputs always embed identically. These are toy stand-ins for learned
/// feature encoders; only their arithmetic is meaningful.
inline Tensor extract_features(const Tensor& a, FeatureExtractor kind) {
    constexpr std::size_t k = 32;
    const std::uint64_t seed =
        0xfea7u ^ (kind == FeatureExtractor::image_analog ? 0x10000u : 0x20000u) ^
        (static_cast<std::uint64_t>(a.numel()) << 20);
    RngStream rng(seed);
    Tensor out({k});
    const double scl = 1.0 / std::sqrt(static_cast<double>(a.numel()));
    for (std::size_t j = 0; j < k; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.numel(); ++i) acc += scl * rng.gaussian() * a[i];
        out[j] = acc;
    }
    return out;
}

inline double cosine(const Tensor& a, const Tensor& b) {
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0)
        throw UndefinedSimilarityError("cosine similarity of a zero-norm embedding");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) dot += a[i] * b[i];
    return dot / (na * nb);
}

/// Cosine similarity of the two inputs under one fixed toy extractor.
inline double feature_similarity(const Tensor& a, const Tensor& b, FeatureExtractor kind) {
    require_same_shape(a, b, "feature_similarity");
    return cosine(extract_features(a, kind), extract_features(b, kind));
}

/// Cross-modal analog: image features vs prompt-embedding features.
inline double prompt_image_similarity(const Tensor& image, const Tensor& prompt_matrix) {
    return cosine(extract_features(image, FeatureExtractor::image_analog),
                  extract_features(prompt_matrix, FeatureExtractor::prompt_analog));
}

// ---------------------------------------------------------------------------
// Average-rank table
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string method;
    double l1 = 0, l2 = 0;               // lower is better
    double clip_i = 0, dino = 0, clip_t = 0; // higher is better
};

struct RankTable {
    std::vector<std::string> methods;
    std::vector<std::array<double, 5>> ranks; // per method: l1,l2,clip_i,dino,clip_t
    std::vector<double> average;

    std::size_t best() const {
        return static_cast<std::size_t>(
            std::min_element(average.begin(), average.end()) - average.begin());
    }
};

namespace detail {

/// Fractional ranking: ties receive the mean of the positions they straddle.
inline std::vector<double> fractional_ranks(const std::vector<double>& vals, bool ascending) {
    const std::size_t n = vals.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ascending ? vals[a] < vals[b] : vals[a] > vals[b];
    });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && vals[order[j + 1]] == vals[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace detail

/// Rank every metric column (ascending for the distances, descending for the
/// similarities) and average the five per-metric ranks.
inline RankTable rank_table(const std::vector<MetricRow>& rows) {
    if (rows.size() < 2) throw ConfigError("rank_table: need at least 2 rows");
    for (const auto& r : rows)
        for (double v : {r.l1, r.l2, r.clip_i, r.dino, r.clip_t})
            if (!std::isfinite(v)) throw InputError("rank_table: non-finite metric for " + r.method);

    auto column = [&](auto getter) {
        std::vector<double> c;
        for (const auto& r : rows) c.push_back(getter(r));
        return c;
    };
    const std::array<std::vector<double>, 5> ranks_by_metric = {
        detail::fractional_ranks(column([](const MetricRow& r) { return r.l1; }), true),
        detail::fractional_ranks(column([](const MetricRow& r) { return r.l2; }), true),
        detail::fractional_ranks(column([](const MetricRow& r) { return r.clip_i; }), false),
        detail::fractional_ranks(column([](const MetricRow& r) { return r.dino; }), false),
        detail::fractional_ranks(column([](const MetricRow& r) { return r.clip_t; }), false)};

    RankTable out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.methods.push_back(rows[i].method);
        std::array<double, 5> rr{};
        double sum = 0.0;
        for (std::size_t m = 0; m < 5; ++m) {
            rr[m] = ranks_by_metric[m][i];
            sum += rr[m];
        }
        out.ranks.push_back(rr);
        out.average.push_back(sum / 5.0);
    }
    return out;
}

inline double round1(double v) { return std::round(v * 10.0) / 10.0; }

// ---- CSV I/O --------------------------------------------------------------

inline std::vector<MetricRow> parse_metric_csv(std::istream& is) {
    std::vector<MetricRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (lineno == 1) {
            if (cells != std::vector<std::string>{"method", "l1", "l2", "clip_i", "dino", "clip_t"})
                throw IoError("metric csv line 1: expected header method,l1,l2,clip_i,dino,clip_t");
            continue;
        }
        if (cells.size() != 6)
            throw IoError("metric csv line " + std::to_string(lineno) + ": expected 6 fields");
        MetricRow r;
        r.method = cells[0];
        try {
            r.l1 = std::stod(cells[1]);
            r.l2 = std::stod(cells[2]);
            r.clip_i = std::stod(cells[3]);
            r.dino = std::stod(cells[4]);
            r.clip_t = std::stod(cells[5]);
        } catch (const std::exception&) {
            throw IoError("metric csv line " + std::to_string(lineno) + ": bad number");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<MetricRow> load_metric_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    return parse_metric_csv(f);
}

inline void write_rank_table_csv(std::ostream& os, const RankTable& t) {
    os << "method,rank_l1,rank_l2,rank_clip_i,rank_dino,rank_clip_t,ave_rank\n";
    for (std::size_t i = 0; i < t.methods.size(); ++i) {
        os << t.methods[i];
        for (double r : t.ranks[i]) os << ',' << r;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", t.average[i]);
        os << ',' << buf << '\n';
    }
}

inline void write_rank_table_text(std::ostream& os, const RankTable& t) {
    std::size_t w = 8;
    for (const auto& m : t.methods) w = std::max(w, m.size() + 2);
    os << std::left << std::setw(static_cast<int>(w)) << "method"
       << "  L1  L2  C-I DINO C-T  AveRank\n";
    for (std::size_t i = 0; i < t.methods.size(); ++i) {
        os << std::left << std::setw(static_cast<int>(w)) << t.methods[i];
        for (double r : t.ranks[i]) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%4.1f", r);
            os << buf;
        }
        char buf[16];
        std::snprintf(buf, sizeof(buf), "  %5.1f", t.average[i]);
        os << buf << (i == t.best() ? "  *" : "") << '\n';
    }
}

} // namespace ledit
