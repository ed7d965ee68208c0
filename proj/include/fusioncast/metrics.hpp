#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fusioncast/data.hpp"
#include "fusioncast/tensor.hpp"

namespace fusioncast {

struct ContingencyTable {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    ContingencyTable& operator+=(const ContingencyTable& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

inline ContingencyTable operator+(ContingencyTable a, const ContingencyTable& b) { return a += b; }

// Mean absolute error over every pixel of every frame, physical units.
inline double mae(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw ShapeError("mae: need equally many non-empty prediction and truth grids");
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < preds.size(); ++f) {
        if (!preds[f].same_shape(truths[f]))
            throw ShapeError("mae: frame shape mismatch " + shape_string(preds[f].shape()) + " vs " +
                             shape_string(truths[f].shape()));
        for (std::size_t i = 0; i < preds[f].size(); ++i) acc += std::abs(double(preds[f][i]) - double(truths[f][i]));
        n += preds[f].size();
    }
    return acc / static_cast<double>(n);
}

inline double rmse(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw ShapeError("rmse: need equally many non-empty prediction and truth grids");
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < preds.size(); ++f) {
        if (!preds[f].same_shape(truths[f]))
            throw ShapeError("rmse: frame shape mismatch " + shape_string(preds[f].shape()) + " vs " +
                             shape_string(truths[f].shape()));
        for (std::size_t i = 0; i < preds[f].size(); ++i) {
            const double d = double(preds[f][i]) - double(truths[f][i]);
            acc += d * d;
        }
        n += preds[f].size();
    }
    return std::sqrt(acc / static_cast<double>(n));
}

// Positive event iff value >= threshold (inclusive).
inline std::vector<std::uint8_t> binarize(const Tensor& grid, double threshold) {
    std::vector<std::uint8_t> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = double(grid[i]) >= threshold ? 1 : 0;
    return out;
}

inline ContingencyTable contingency(const std::vector<std::uint8_t>& pred_bin,
                                    const std::vector<std::uint8_t>& truth_bin) {
    if (pred_bin.size() != truth_bin.size())
        throw ShapeError("contingency: grids differ in size, " + std::to_string(pred_bin.size()) + " vs " +
                         std::to_string(truth_bin.size()));
    ContingencyTable t;
    for (std::size_t i = 0; i < pred_bin.size(); ++i) {
        if (pred_bin[i] && truth_bin[i]) ++t.tp;
        else if (pred_bin[i] && !truth_bin[i]) ++t.fp;
        else if (!pred_bin[i] && truth_bin[i]) ++t.fn;
        else ++t.tn;
    }
    return t;
}

// TP/(TP+FP+FN); empty when the denominator is zero (no events, no alarms).
inline std::optional<double> csi(const ContingencyTable& t) {
    const std::uint64_t denom = t.tp + t.fp + t.fn;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(t.tp) / static_cast<double>(denom);
}

enum class CsiAggregation { Pooled, Mean };

inline const char* csi_agg_name(CsiAggregation a) { return a == CsiAggregation::Pooled ? "pooled" : "mean"; }

inline CsiAggregation csi_agg_from_string(const std::string& s) {
    if (s == "pooled") return CsiAggregation::Pooled;
    if (s == "mean") return CsiAggregation::Mean;
    throw ConfigError("unknown csi aggregation '" + s + "' (expected pooled|mean)");
}

struct MetricsReport {
    std::vector<double> thresholds{0.1, 1.0, 4.0};
    std::vector<int> lead_frames{1, 4, 8, 12};
    std::int64_t cadence_s = 600;
    std::string variant = "model";
    std::string config_fingerprint;
    CsiAggregation agg = CsiAggregation::Pooled;
    std::size_t n_samples = 0;
    double mae = 0, rmse = 0;
    std::vector<std::vector<ContingencyTable>> tables;           // [threshold][lead], pooled counts
    std::vector<std::vector<std::optional<double>>> csi_values;  // [threshold][lead]

    int lead_minutes(std::size_t li) const {
        return static_cast<int>(lead_frames[li] * cadence_s / 60);
    }

    std::optional<double> csi_at(double threshold, int lead_frame) const {
        for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
            for (std::size_t li = 0; li < lead_frames.size(); ++li)
                if (thresholds[ti] == threshold && lead_frames[li] == lead_frame) return csi_values[ti][li];
        return std::nullopt;
    }

    bool has_undefined() const {
        for (const auto& row : csi_values)
            for (const auto& v : row)
                if (!v) return true;
        return false;
    }
};

// Pools contingency counts per (threshold, lead frame) over all samples and
// evaluates MAE/RMSE over every frame of every sample. Predictions and truths
// must agree in epochs and shape; both are in physical units.
inline MetricsReport evaluate(const std::vector<FrameSequence>& preds, const std::vector<FrameSequence>& truths,
                              const std::vector<double>& thresholds = {0.1, 1.0, 4.0},
                              const std::vector<int>& lead_frames = {1, 4, 8, 12},
                              CsiAggregation agg = CsiAggregation::Pooled) {
    if (preds.size() != truths.size() || preds.empty())
        throw DataError("evaluate: prediction and truth sample counts differ or are empty");

    MetricsReport report;
    report.thresholds = thresholds;
    report.lead_frames = lead_frames;
    report.agg = agg;
    report.n_samples = preds.size();
    report.tables.assign(thresholds.size(), std::vector<ContingencyTable>(lead_frames.size()));
    report.csi_values.assign(thresholds.size(), std::vector<std::optional<double>>(lead_frames.size()));

    std::vector<std::vector<std::vector<double>>> per_sample(
        thresholds.size(), std::vector<std::vector<double>>(lead_frames.size()));

    std::vector<Tensor> all_preds, all_truths;
    for (std::size_t s = 0; s < preds.size(); ++s) {
        if (preds[s].epochs != truths[s].epochs)
            throw DataError("evaluate: sample " + std::to_string(s) + " epochs are misaligned");
        report.cadence_s = preds[s].cadence;
        for (std::size_t f = 0; f < preds[s].size(); ++f) {
            all_preds.push_back(preds[s].frames[f]);
            all_truths.push_back(truths[s].frames[f]);
        }
        for (std::size_t li = 0; li < lead_frames.size(); ++li) {
            const int lead = lead_frames[li];
            if (lead < 1 || static_cast<std::size_t>(lead) > preds[s].size())
                throw DataError("evaluate: lead frame " + std::to_string(lead) + " outside forecast horizon");
            const Tensor& pf = preds[s].frames[static_cast<std::size_t>(lead - 1)];
            const Tensor& tf = truths[s].frames[static_cast<std::size_t>(lead - 1)];
            for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
                const ContingencyTable t = contingency(binarize(pf, thresholds[ti]), binarize(tf, thresholds[ti]));
                report.tables[ti][li] += t;
                if (const auto v = csi(t)) per_sample[ti][li].push_back(*v);
            }
        }
    }

    report.mae = mae(all_preds, all_truths);
    report.rmse = rmse(all_preds, all_truths);

    for (std::size_t ti = 0; ti < thresholds.size(); ++ti)
        for (std::size_t li = 0; li < lead_frames.size(); ++li) {
            if (agg == CsiAggregation::Pooled) {
                report.csi_values[ti][li] = csi(report.tables[ti][li]);
            } else if (!per_sample[ti][li].empty()) {
                double acc = 0;
                for (double v : per_sample[ti][li]) acc += v;
                report.csi_values[ti][li] = acc / static_cast<double>(per_sample[ti][li].size());
            }
        }
    return report;
}

// ---------------------------------------------------------------------------
// CSV reports: categorical.csv (threshold x lead-time CSI) and continuous.csv
// (RMSE, MAE). Fixed 6-decimal formatting, undefined cells serialized as NA.
// ---------------------------------------------------------------------------

inline std::string categorical_header(const MetricsReport& r) {
    std::string h = "threshold,variant";
    for (std::size_t li = 0; li < r.lead_frames.size(); ++li)
        h += ",csi_t" + std::to_string(r.lead_minutes(li));
    return h;
}

inline std::string categorical_rows(const MetricsReport& r) {
    std::string out;
    for (std::size_t ti = 0; ti < r.thresholds.size(); ++ti) {
        out += fmt_fixed(r.thresholds[ti], 1) + "," + r.variant;
        for (std::size_t li = 0; li < r.lead_frames.size(); ++li)
            out += "," + (r.csi_values[ti][li] ? fmt_fixed(*r.csi_values[ti][li]) : std::string("NA"));
        out += "\n";
    }
    return out;
}

inline void write_report(const MetricsReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir + "/categorical.csv");
        if (!out) throw IoError("cannot write " + dir + "/categorical.csv");
        out << categorical_header(r) << "\n" << categorical_rows(r);
    }
    {
        std::ofstream out(dir + "/continuous.csv");
        if (!out) throw IoError("cannot write " + dir + "/continuous.csv");
        out << "variant,rmse,mae\n"
            << r.variant << "," << fmt_fixed(r.rmse) << "," << fmt_fixed(r.mae) << "\n";
    }
}

// Side-by-side table over several variants, one block per threshold.
inline void write_comparison(const std::vector<MetricsReport>& reports, const std::string& path) {
    if (reports.empty()) throw DataError("write_comparison: no reports");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << categorical_header(reports.front()) << "\n";
    for (std::size_t ti = 0; ti < reports.front().thresholds.size(); ++ti)
        for (const MetricsReport& r : reports) {
            out << fmt_fixed(r.thresholds[ti], 1) << "," << r.variant;
            for (std::size_t li = 0; li < r.lead_frames.size(); ++li)
                out << "," << (r.csi_values[ti][li] ? fmt_fixed(*r.csi_values[ti][li]) : std::string("NA"));
            out << "\n";
        }
}

// Minimal parser for the categorical layout (tests and tooling).
struct CategoricalRow {
    double threshold = 0;
    std::string variant;
    std::vector<std::optional<double>> csi;
};

inline std::vector<CategoricalRow> parse_categorical_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    std::vector<CategoricalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        CategoricalRow row;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i)
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        if (fields.size() < 3) throw DataError(path + ": malformed row '" + line + "'");
        row.threshold = std::stod(fields[0]);
        row.variant = fields[1];
        for (std::size_t i = 2; i < fields.size(); ++i)
            row.csi.push_back(fields[i] == "NA" ? std::optional<double>{} : std::optional<double>{std::stod(fields[i])});
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace fusioncast
