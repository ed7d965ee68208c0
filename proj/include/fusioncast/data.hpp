#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fusioncast/tensor.hpp"

namespace fusioncast {

enum class Unit : std::uint8_t { Millimeters = 0, MillimetersPerHour = 1, Normalized = 2 };

// Geographic grid: pixel-center registration, rows ordered north to south.
struct GridSpec {
    double lat_min = 32.0;
    double lat_max = 42.24;
    double lon_min = -93.49;
    double lon_max = -83.25;
    std::size_t n = 64;

    void validate() const {
        if (lat_max <= lat_min || lon_max <= lon_min || n < 2)
            throw ConfigError("grid spec invalid: lat " + std::to_string(lat_min) + ".." + std::to_string(lat_max) +
                              " lon " + std::to_string(lon_min) + ".." + std::to_string(lon_max) + " n " +
                              std::to_string(n));
    }

    double cell_dlat() const { return (lat_max - lat_min) / static_cast<double>(n); }
    double cell_dlon() const { return (lon_max - lon_min) / static_cast<double>(n); }
    // Row 0 sits at the northern edge.
    double pixel_lat(std::size_t row) const { return lat_max - (static_cast<double>(row) + 0.5) * cell_dlat(); }
    double pixel_lon(std::size_t col) const { return lon_min + (static_cast<double>(col) + 0.5) * cell_dlon(); }
};

// Time-ordered stack of (1,n,n) grids on a fixed cadence. `valid` marks
// declared-missing frames after resampling; empty means all present.
struct FrameSequence {
    std::vector<Tensor> frames;
    std::vector<std::int64_t> epochs;
    std::int64_t cadence = 600;
    Unit unit = Unit::MillimetersPerHour;
    std::vector<std::uint8_t> valid;

    std::size_t size() const { return frames.size(); }
    bool frame_valid(std::size_t i) const { return valid.empty() || valid[i] != 0; }
    std::size_t grid_extent() const { return frames.empty() ? 0 : frames[0].extent(1); }

    FrameSequence slice(std::size_t begin, std::size_t count) const {
        FrameSequence out;
        out.cadence = cadence;
        out.unit = unit;
        out.frames.assign(frames.begin() + begin, frames.begin() + begin + count);
        out.epochs.assign(epochs.begin() + begin, epochs.begin() + begin + count);
        if (!valid.empty()) out.valid.assign(valid.begin() + begin, valid.begin() + begin + count);
        return out;
    }
};

struct StationRecord {
    std::string station_id;
    double lat = 0, lon = 0;
    std::int64_t epoch = 0;
    double pwv = 0;  // mm
};

struct StationSeries {
    std::string station_id;
    double lat = 0, lon = 0;
    std::vector<std::int64_t> epochs;
    std::vector<double> values;  // mm
};

// ---------------------------------------------------------------------------
// Station CSV
// ---------------------------------------------------------------------------

constexpr const char* kStationCsvHeader = "station_id,lat,lon,epoch,pwv_mm";
constexpr double kPwvPhysicalMaxMm = 150.0;

struct StationCsv {
    std::vector<StationRecord> records;
    std::size_t dropped = 0;  // rows with non-finite or out-of-bound pwv
};

inline StationCsv load_station_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open station csv: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kStationCsvHeader)
        throw DataError(path + ": bad header '" + line + "', expected '" + kStationCsvHeader + "'");

    StationCsv out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 5)
            throw DataError(path + ": line " + std::to_string(lineno) + ": expected 5 fields, got " +
                            std::to_string(fields.size()));
        StationRecord rec;
        rec.station_id = fields[0];
        try {
            std::size_t used = 0;
            rec.lat = std::stod(fields[1], &used);
            rec.lon = std::stod(fields[2], &used);
            rec.epoch = std::stoll(fields[3], &used);
            rec.pwv = std::stod(fields[4], &used);
        } catch (const std::exception&) {
            throw DataError(path + ": line " + std::to_string(lineno) + ": unparseable row '" + line + "'");
        }
        if (!std::isfinite(rec.pwv) || rec.pwv < 0.0 || rec.pwv > kPwvPhysicalMaxMm) {
            ++out.dropped;
            continue;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

inline void save_station_csv(const std::string& path, const std::vector<StationSeries>& stations) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write station csv: " + path);
    out << kStationCsvHeader << '\n';
    for (const StationSeries& s : stations)
        for (std::size_t i = 0; i < s.epochs.size(); ++i)
            out << s.station_id << ',' << fmt_fixed(s.lat) << ',' << fmt_fixed(s.lon) << ',' << s.epochs[i]
                << ',' << fmt_fixed(s.values[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Scattered-station interpolation: inverse-distance weighting, power 2, over
// the 4 nearest stations per pixel; a pixel within half a cell of a station
// takes that station's value exactly.
// ---------------------------------------------------------------------------

inline double great_circle_m(double lat1, double lon1, double lat2, double lon2) {
    constexpr double kEarthRadiusM = 6371000.0;
    constexpr double kDeg = M_PI / 180.0;
    const double dlat = (lat2 - lat1) * kDeg, dlon = (lon2 - lon1) * kDeg;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

inline Tensor interpolate_pwv(const std::vector<StationRecord>& records, const GridSpec& spec) {
    spec.validate();
    if (records.empty()) throw DataError("interpolate_pwv: no stations with valid values at this epoch");

    constexpr std::size_t kNeighbours = 4;
    constexpr double kEarthRadiusM = 6371000.0;
    const double half_cell_m = 0.5 * spec.cell_dlat() * (M_PI / 180.0) * kEarthRadiusM;

    Tensor grid({1, spec.n, spec.n});
    real* out = grid.mutable_data();
    std::vector<std::pair<double, std::size_t>> dist(records.size());

    for (std::size_t row = 0; row < spec.n; ++row) {
        const double plat = spec.pixel_lat(row);
        for (std::size_t col = 0; col < spec.n; ++col) {
            const double plon = spec.pixel_lon(col);
            for (std::size_t s = 0; s < records.size(); ++s)
                dist[s] = {great_circle_m(plat, plon, records[s].lat, records[s].lon), s};
            const std::size_t k = std::min(kNeighbours, records.size());
            std::partial_sort(dist.begin(), dist.begin() + k, dist.end());

            if (k == 1 || dist[0].first < half_cell_m) {
                out[row * spec.n + col] = static_cast<real>(records[dist[0].second].pwv);
                continue;
            }
            double wsum = 0, acc = 0;
            for (std::size_t i = 0; i < k; ++i) {
                const double w = 1.0 / (dist[i].first * dist[i].first);
                wsum += w;
                acc += w * records[dist[i].second].pwv;
            }
            out[row * spec.n + col] = static_cast<real>(acc / wsum);
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Temporal resampling: nearest-frame selection on the target cadence. A
// target epoch farther than `max_gap_s` from any source frame becomes a
// declared missing frame.
// ---------------------------------------------------------------------------

inline FrameSequence resample_temporal(const FrameSequence& seq, std::int64_t target_cadence = 600,
                                       std::int64_t max_gap_s = 3600) {
    if (seq.frames.empty()) throw DataError("resample_temporal: empty input");
    if (seq.cadence <= 0 || target_cadence <= 0) throw DataError("resample_temporal: non-positive cadence");
    if (seq.cadence % target_cadence != 0 && target_cadence % seq.cadence != 0)
        throw DataError("resample_temporal: cadences " + std::to_string(seq.cadence) + " and " +
                        std::to_string(target_cadence) + " are not divisible");

    FrameSequence out;
    out.cadence = target_cadence;
    out.unit = seq.unit;
    const std::int64_t anchor = seq.epochs.front();
    for (std::int64_t t = anchor; t <= seq.epochs.back(); t += target_cadence) {
        const auto it = std::lower_bound(seq.epochs.begin(), seq.epochs.end(), t);
        std::size_t idx = static_cast<std::size_t>(it - seq.epochs.begin());
        if (idx == seq.epochs.size()) {
            idx = seq.epochs.size() - 1;
        } else if (idx > 0 && t - seq.epochs[idx - 1] <= seq.epochs[idx] - t) {
            --idx;  // ties break toward the earlier frame
        }
        const std::int64_t gap = std::abs(seq.epochs[idx] - t);
        out.epochs.push_back(t);
        if (gap > max_gap_s || !seq.frame_valid(idx)) {
            out.frames.push_back(Tensor::zeros(seq.frames[0].shape()));
            out.valid.push_back(0);
        } else {
            out.frames.push_back(seq.frames[idx]);
            out.valid.push_back(1);
        }
    }
    if (std::all_of(out.valid.begin(), out.valid.end(), [](std::uint8_t v) { return v != 0; })) out.valid.clear();
    return out;
}

// ---------------------------------------------------------------------------
// Normalization. Radar: y = log(1+min(x,128))/log(129), exactly invertible
// below the clip. PWV: y = x/80 clipped to [0, 1.5].
// ---------------------------------------------------------------------------

constexpr double kRadarClipMmH = 128.0;
constexpr double kPwvScaleMm = 80.0;
constexpr double kPwvNormCap = 1.5;

inline real normalize_radar_value(real x) {
    if (x < real(0)) throw DataError("normalize_radar: negative intensity " + std::to_string(double(x)));
    const double clipped = std::min(double(x), kRadarClipMmH);
    return static_cast<real>(std::log1p(clipped) / std::log(1.0 + kRadarClipMmH));
}

inline real denormalize_radar_value(real y) {
    return static_cast<real>(std::expm1(double(y) * std::log(1.0 + kRadarClipMmH)));
}

inline real normalize_pwv_value(real x) {
    const double y = double(x) / kPwvScaleMm;
    return static_cast<real>(std::clamp(y, 0.0, kPwvNormCap));
}

inline Tensor map_values(const Tensor& t, real (*fn)(real)) {
    Tensor out(t.shape());
    real* po = out.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) po[i] = fn(t[i]);
    return out;
}

inline Tensor normalize_radar(const Tensor& t) { return map_values(t, normalize_radar_value); }
inline Tensor denormalize_radar(const Tensor& t) { return map_values(t, denormalize_radar_value); }
inline Tensor normalize_pwv(const Tensor& t) { return map_values(t, normalize_pwv_value); }

// ---------------------------------------------------------------------------
// Sample windows
// ---------------------------------------------------------------------------

struct SampleWindow {
    FrameSequence pwv;     // T_in frames, mm
    FrameSequence hist;    // T_in frames, mm/h
    FrameSequence prior;   // T_out frames, mm/h
    FrameSequence target;  // T_out frames, mm/h (ground truth)
};

using PriorGenerator = std::function<FrameSequence(const FrameSequence& hist, int t_out)>;

// Sliding windows with stride 1. `prior` may be a stored sequence covering the
// target epochs or a generator invoked with each window's history. Windows
// touching a declared-missing frame are skipped.
inline std::vector<SampleWindow> make_windows(const FrameSequence& radar, const FrameSequence& pwv,
                                              const FrameSequence* stored_prior, const PriorGenerator& gen_prior,
                                              int t_in, int t_out) {
    if (t_in < 1 || t_out < 1) throw ConfigError("make_windows: t_in and t_out must be >= 1");
    if (radar.epochs != pwv.epochs)
        throw DataError("make_windows: radar and pwv epochs are not aligned (" + std::to_string(radar.size()) +
                        " vs " + std::to_string(pwv.size()) + " frames)");
    if (!stored_prior && !gen_prior) throw ConfigError("make_windows: no prior source");

    std::vector<SampleWindow> out;
    const std::size_t span = static_cast<std::size_t>(t_in + t_out);
    if (radar.size() < span) return out;

    for (std::size_t anchor = 0; anchor + span <= radar.size(); ++anchor) {
        bool ok = true;
        for (std::size_t i = anchor; i < anchor + span && ok; ++i)
            ok = radar.frame_valid(i) && pwv.frame_valid(i);
        if (!ok) continue;

        SampleWindow w;
        w.pwv = pwv.slice(anchor, static_cast<std::size_t>(t_in));
        w.hist = radar.slice(anchor, static_cast<std::size_t>(t_in));
        w.target = radar.slice(anchor + t_in, static_cast<std::size_t>(t_out));

        if (stored_prior) {
            const auto it = std::find(stored_prior->epochs.begin(), stored_prior->epochs.end(),
                                      w.target.epochs.front());
            if (it == stored_prior->epochs.end()) continue;
            const std::size_t pi = static_cast<std::size_t>(it - stored_prior->epochs.begin());
            if (pi + t_out > stored_prior->size()) continue;
            w.prior = stored_prior->slice(pi, static_cast<std::size_t>(t_out));
        } else {
            w.prior = gen_prior(w.hist, t_out);
        }
        if (w.prior.epochs != w.target.epochs)
            throw DataError("make_windows: prior epochs do not match target epochs at anchor " +
                            std::to_string(anchor));
        out.push_back(std::move(w));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes. A smooth moisture field drifts slowly; Gaussian rain
// cells advect with a constant per-scene velocity and their amplitudes grow
// or decay with the moisture sampled at the cell centre, so rainfall several
// frames ahead is genuinely predictable from the moisture field. Stations
// sample the moisture field (rescaled to mm) plus Gaussian noise.
// ---------------------------------------------------------------------------

struct SynthParams {
    std::size_t n = 32;
    int n_frames = 28;
    int n_cells = 3;
    double cell_sigma = 3.0;      // px
    double lambda = 0.35;         // growth coupling per frame
    int n_stations = 25;
    double station_noise = 0.3;   // mm
    double speed_min = 0.5;       // px/frame
    double speed_max = 1.5;
    bool fixed_velocity = false;  // when set, vx/vy are used verbatim
    double vx = 0.0, vy = 0.0;
    double moisture_speed = 0.15;  // px/frame
    double amp_min = 0.8, amp_max = 4.5;  // mm/h
    std::int64_t start_epoch = 1677628800;
    std::int64_t cadence = 600;

    void validate() const {
        if (n < 4 || n_frames < 1 || n_cells < 1 || n_stations < 1 || cell_sigma <= 0 || cadence <= 0 ||
            speed_min < 0 || speed_max < speed_min || amp_min <= 0 || amp_max < amp_min)
            throw ConfigError("synth_scene: invalid parameters");
    }
};

struct SynthScene {
    FrameSequence radar;  // mm/h
    std::vector<StationSeries> stations;
    GridSpec grid;
    double vx = 0, vy = 0;
};

namespace detail {

// Low-frequency periodic field in [0,1]; smooth everywhere. The per-scene
// offset moves the whole scene between dry and moist regimes, so domain-mean
// moisture is informative across scenes.
struct MoistureField {
    struct Mode {
        double amp, fx, fy, phase;
    };
    std::vector<Mode> modes;
    double offset = 0.5;
    double n = 1, ux = 0, uy = 0;

    double operator()(double x, double y, double t) const {
        const double px = x - ux * t, py = y - uy * t;
        double v = offset;
        for (const Mode& m : modes) v += m.amp * std::sin(2.0 * M_PI * (m.fx * px + m.fy * py) / n + m.phase);
        return std::clamp(v, 0.0, 1.0);
    }
};

inline MoistureField make_moisture(Rng& rng, std::size_t n, double speed) {
    MoistureField f;
    f.n = static_cast<double>(n);
    f.offset = uniform_range(rng, 0.30, 0.70);
    const double angle = uniform_range(rng, 0, 2.0 * M_PI);
    f.ux = speed * std::cos(angle);
    f.uy = speed * std::sin(angle);
    for (int k = 0; k < 4; ++k) {
        MoistureField::Mode m;
        m.amp = uniform_range(rng, 0.10, 0.22);
        m.fx = std::floor(uniform_range(rng, -2.0, 3.0));
        m.fy = std::floor(uniform_range(rng, -2.0, 3.0));
        if (m.fx == 0 && m.fy == 0) m.fx = 1;
        m.phase = uniform_range(rng, 0, 2.0 * M_PI);
        f.modes.push_back(m);
    }
    return f;
}

}  // namespace detail

inline SynthScene synth_scene(std::uint64_t seed, const SynthParams& params) {
    params.validate();
    Rng rng(seed);

    SynthScene scene;
    scene.grid.n = params.n;
    scene.grid.validate();

    const detail::MoistureField moisture = detail::make_moisture(rng, params.n, params.moisture_speed);

    if (params.fixed_velocity) {
        scene.vx = params.vx;
        scene.vy = params.vy;
    } else {
        const double speed = uniform_range(rng, params.speed_min, params.speed_max);
        const double angle = uniform_range(rng, 0, 2.0 * M_PI);
        scene.vx = speed * std::cos(angle);
        scene.vy = speed * std::sin(angle);
    }

    struct Cell {
        double x0, y0, amp;
    };
    std::vector<Cell> cells;
    const double nd = static_cast<double>(params.n);
    for (int k = 0; k < params.n_cells; ++k) {
        Cell c;
        c.x0 = uniform_range(rng, 0.2 * nd, 0.8 * nd);
        c.y0 = uniform_range(rng, 0.2 * nd, 0.8 * nd);
        c.amp = uniform_range(rng, params.amp_min, params.amp_max);
        cells.push_back(c);
    }

    std::vector<std::pair<double, double>> station_px(static_cast<std::size_t>(params.n_stations));
    for (auto& p : station_px) {
        p.first = uniform_range(rng, 0.03 * nd, 0.97 * nd);
        p.second = uniform_range(rng, 0.03 * nd, 0.97 * nd);
    }

    scene.radar.cadence = params.cadence;
    scene.radar.unit = Unit::MillimetersPerHour;
    scene.stations.resize(station_px.size());
    for (std::size_t s = 0; s < station_px.size(); ++s) {
        char name[16];
        std::snprintf(name, sizeof(name), "S%03u", static_cast<unsigned>(s % 1000));
        scene.stations[s].station_id = name;
        // pixel coordinates -> geographic placement on the scene grid
        scene.stations[s].lat = scene.grid.lat_max - (station_px[s].second / nd) * (scene.grid.lat_max - scene.grid.lat_min);
        scene.stations[s].lon = scene.grid.lon_min + (station_px[s].first / nd) * (scene.grid.lon_max - scene.grid.lon_min);
    }

    std::vector<double> amps(cells.size());
    for (std::size_t k = 0; k < cells.size(); ++k) amps[k] = cells[k].amp;

    const double two_sigma_sq = 2.0 * params.cell_sigma * params.cell_sigma;
    for (int t = 0; t < params.n_frames; ++t) {
        const std::int64_t epoch = params.start_epoch + static_cast<std::int64_t>(t) * params.cadence;
        Tensor frame({1, params.n, params.n});
        real* p = frame.mutable_data();
        for (std::size_t k = 0; k < cells.size(); ++k) {
            const double cx = cells[k].x0 + scene.vx * t;
            const double cy = cells[k].y0 + scene.vy * t;
            for (std::size_t y = 0; y < params.n; ++y) {
                const double dy = static_cast<double>(y) - cy;
                for (std::size_t x = 0; x < params.n; ++x) {
                    const double dx = static_cast<double>(x) - cx;
                    p[y * params.n + x] += static_cast<real>(amps[k] * std::exp(-(dx * dx + dy * dy) / two_sigma_sq));
                }
            }
        }
        scene.radar.frames.push_back(std::move(frame));
        scene.radar.epochs.push_back(epoch);

        for (std::size_t s = 0; s < station_px.size(); ++s) {
            const double m = moisture(station_px[s].first, station_px[s].second, t);
            const double pwv = 8.0 + 45.0 * m + params.station_noise * normal_sample(rng);
            scene.stations[s].epochs.push_back(epoch);
            scene.stations[s].values.push_back(std::clamp(pwv, 0.0, kPwvPhysicalMaxMm));
        }

        // dA/dt = lambda * (m(centre) - 0.5) * A, one frame per unit time
        for (std::size_t k = 0; k < cells.size(); ++k) {
            const double cx = cells[k].x0 + scene.vx * t;
            const double cy = cells[k].y0 + scene.vy * t;
            amps[k] *= std::exp(params.lambda * (moisture(cx, cy, t) - 0.5));
        }
    }
    return scene;
}

// ---------------------------------------------------------------------------
// fgrid container: magic "FGRD", version u32, dtype u8 (0=f32,1=f64), n u32,
// epoch i64, unit u8, row-major little-endian payload.
// ---------------------------------------------------------------------------

enum class GridDType : std::uint8_t { F32 = 0, F64 = 1 };

struct GridFile {
    Tensor frame;  // (1,n,n)
    std::int64_t epoch = 0;
    Unit unit = Unit::MillimetersPerHour;
    GridDType dtype = GridDType::F64;
};

namespace detail {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_raw(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return static_cast<bool>(in);
}

}  // namespace detail

inline void save_grid(const std::string& path, const Tensor& frame, std::int64_t epoch, Unit unit,
                      GridDType dtype = GridDType::F64) {
    if (frame.rank() != 3 || frame.extent(0) != 1 || frame.extent(1) != frame.extent(2))
        throw ShapeError("save_grid: expected (1,n,n), got " + shape_string(frame.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write grid file: " + path);

    out.write("FGRD", 4);
    detail::write_raw(out, std::uint32_t{1});
    detail::write_raw(out, static_cast<std::uint8_t>(dtype));
    detail::write_raw(out, static_cast<std::uint32_t>(frame.extent(1)));
    detail::write_raw(out, epoch);
    detail::write_raw(out, static_cast<std::uint8_t>(unit));
    if (dtype == GridDType::F64) {
        for (std::size_t i = 0; i < frame.size(); ++i) detail::write_raw(out, static_cast<double>(frame[i]));
    } else {
        for (std::size_t i = 0; i < frame.size(); ++i) detail::write_raw(out, static_cast<float>(frame[i]));
    }
    if (!out) throw IoError("short write: " + path);
}

inline GridFile load_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open grid file: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FGRD", 4) != 0) throw IoError(path + ": bad magic");
    std::uint32_t version = 0, n = 0;
    std::uint8_t dtype = 0, unit = 0;
    std::int64_t epoch = 0;
    if (!detail::read_raw(in, version) || version != 1) throw IoError(path + ": unsupported version");
    if (!detail::read_raw(in, dtype) || dtype > 1) throw IoError(path + ": unknown dtype tag");
    if (!detail::read_raw(in, n) || n < 1) throw IoError(path + ": bad grid extent");
    if (!detail::read_raw(in, epoch)) throw IoError(path + ": truncated header");
    if (!detail::read_raw(in, unit) || unit > 2) throw IoError(path + ": unknown unit tag");

    GridFile out;
    out.epoch = epoch;
    out.unit = static_cast<Unit>(unit);
    out.dtype = static_cast<GridDType>(dtype);
    out.frame = Tensor({1, n, n});
    real* p = out.frame.mutable_data();
    for (std::size_t i = 0; i < out.frame.size(); ++i) {
        if (dtype == 1) {
            double v;
            if (!detail::read_raw(in, v)) throw IoError(path + ": truncated payload");
            p[i] = static_cast<real>(v);
        } else {
            float v;
            if (!detail::read_raw(in, v)) throw IoError(path + ": truncated payload");
            p[i] = static_cast<real>(v);
        }
    }
    return out;
}

}  // namespace fusioncast
