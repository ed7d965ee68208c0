#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusioncast/data.hpp"
#include "fusioncast/flow.hpp"
#include "fusioncast/trainer.hpp"

namespace fusioncast {

// On-disk corpus layout:
//   <dir>/manifest.json
//   <dir>/stations.csv
//   <dir>/radar/<epoch>.fgrid
//   <dir>/prior/<anchor_epoch>/<epoch>.fgrid
// Prior files live under their forecast anchor: a prior frame is only valid
// relative to the history window that produced it, so a flat per-epoch store
// would leak later observations into earlier windows.

struct SceneEntry {
    int id = 0;
    std::uint64_t seed = 0;
    std::int64_t start_epoch = 0;
    int n_frames = 0;
    double vx = 0, vy = 0;
};

struct Manifest {
    GridSpec grid;
    std::int64_t cadence = 600;
    std::vector<SceneEntry> scenes;
};

inline void write_manifest(const std::string& dir, const Manifest& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["grid"] = {{"n", m.grid.n},
                 {"lat_min", m.grid.lat_min},
                 {"lat_max", m.grid.lat_max},
                 {"lon_min", m.grid.lon_min},
                 {"lon_max", m.grid.lon_max}};
    j["cadence_s"] = m.cadence;
    j["stations_csv"] = "stations.csv";
    j["scenes"] = nlohmann::json::array();
    for (const SceneEntry& s : m.scenes)
        j["scenes"].push_back({{"id", s.id},
                               {"seed", s.seed},
                               {"start_epoch", s.start_epoch},
                               {"n_frames", s.n_frames},
                               {"velocity", {s.vx, s.vy}}});
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("cannot write manifest: " + dir + "/manifest.json");
    out << j.dump(2) << "\n";
}

inline Manifest read_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("cannot open manifest: " + dir + "/manifest.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir + "/manifest.json: " + e.what());
    }
    Manifest m;
    try {
        m.grid.n = j.at("grid").at("n").get<std::size_t>();
        m.grid.lat_min = j.at("grid").at("lat_min").get<double>();
        m.grid.lat_max = j.at("grid").at("lat_max").get<double>();
        m.grid.lon_min = j.at("grid").at("lon_min").get<double>();
        m.grid.lon_max = j.at("grid").at("lon_max").get<double>();
        m.cadence = j.at("cadence_s").get<std::int64_t>();
        for (const auto& s : j.at("scenes")) {
            SceneEntry e;
            e.id = s.at("id").get<int>();
            e.seed = s.at("seed").get<std::uint64_t>();
            e.start_epoch = s.at("start_epoch").get<std::int64_t>();
            e.n_frames = s.at("n_frames").get<int>();
            e.vx = s.at("velocity")[0].get<double>();
            e.vy = s.at("velocity")[1].get<double>();
            m.scenes.push_back(e);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir + "/manifest.json: missing field: " + e.what());
    }
    m.grid.validate();
    return m;
}

// Generates `n_scenes` day-separated scenes and writes the corpus layout.
inline Manifest write_synthetic_corpus(const std::string& dir, std::uint64_t corpus_seed, int n_scenes,
                                       const SynthParams& base, const GridSpec& geo) {
    if (n_scenes < 1) throw ConfigError("synth: need at least one scene");
    std::filesystem::create_directories(dir + "/radar");
    std::filesystem::create_directories(dir + "/prior");

    Manifest manifest;
    manifest.grid = geo;
    manifest.grid.n = base.n;
    manifest.cadence = base.cadence;

    std::vector<StationSeries> all_stations;
    for (int k = 0; k < n_scenes; ++k) {
        SynthParams params = base;
        params.start_epoch = base.start_epoch + static_cast<std::int64_t>(k) * 86400;
        const std::uint64_t seed = mix64(corpus_seed, static_cast<std::uint64_t>(k));
        SynthScene scene = synth_scene(seed, params);

        for (std::size_t f = 0; f < scene.radar.size(); ++f)
            save_grid(dir + "/radar/" + std::to_string(scene.radar.epochs[f]) + ".fgrid", scene.radar.frames[f],
                      scene.radar.epochs[f], Unit::MillimetersPerHour);

        for (StationSeries& s : scene.stations) {
            s.station_id = "s" + std::to_string(k) + "_" + s.station_id;
            all_stations.push_back(std::move(s));
        }
        manifest.scenes.push_back({k, seed, params.start_epoch, params.n_frames, scene.vx, scene.vy});
    }
    save_station_csv(dir + "/stations.csv", all_stations);
    write_manifest(dir, manifest);
    return manifest;
}

struct LoadOptions {
    int t_in = 4, t_out = 12;
    int train_scenes = 8, val_scenes = 2, test_scenes = 3;
    std::string prior_mode = "generate";  // generate | stored
    PriorParams prior;
    std::int64_t station_carry_s = 3600;
    double station_min_availability = 0.9;
};

inline FrameSequence load_radar_scene(const std::string& dir, const SceneEntry& scene, std::int64_t cadence) {
    FrameSequence seq;
    seq.cadence = cadence;
    seq.unit = Unit::MillimetersPerHour;
    for (int f = 0; f < scene.n_frames; ++f) {
        const std::int64_t epoch = scene.start_epoch + static_cast<std::int64_t>(f) * cadence;
        const GridFile g = load_grid(dir + "/radar/" + std::to_string(epoch) + ".fgrid");
        if (g.epoch != epoch)
            throw DataError("radar frame " + std::to_string(epoch) + " carries epoch " + std::to_string(g.epoch));
        seq.frames.push_back(g.frame);
        seq.epochs.push_back(epoch);
    }
    return seq;
}

// Stored-prior source for one scene: reads prior/<anchor>/<epoch>.fgrid.
inline PriorGenerator stored_prior_reader(const std::string& dir) {
    return [dir](const FrameSequence& hist, int t_out) {
        const std::int64_t anchor = hist.epochs.back();
        FrameSequence out;
        out.cadence = hist.cadence;
        out.unit = Unit::MillimetersPerHour;
        for (int k = 1; k <= t_out; ++k) {
            const std::int64_t epoch = anchor + static_cast<std::int64_t>(k) * hist.cadence;
            const std::string path =
                dir + "/prior/" + std::to_string(anchor) + "/" + std::to_string(epoch) + ".fgrid";
            const GridFile g = load_grid(path);
            out.frames.push_back(g.frame);
            out.epochs.push_back(epoch);
        }
        return out;
    };
}

inline Dataset load_dataset(const std::string& dir, const LoadOptions& opt) {
    if (!std::filesystem::exists(dir + "/manifest.json"))
        throw IoError("data directory '" + dir + "' is missing manifest.json");
    const Manifest manifest = read_manifest(dir);

    const StationCsv csv = load_station_csv(dir + "/stations.csv");
    std::map<std::string, StationSeries> by_id;
    for (const StationRecord& r : csv.records) {
        StationSeries& s = by_id[r.station_id];
        if (s.epochs.empty()) {
            s.station_id = r.station_id;
            s.lat = r.lat;
            s.lon = r.lon;
        }
        s.epochs.push_back(r.epoch);
        s.values.push_back(r.pwv);
    }

    Dataset data;
    data.grid = manifest.grid;
    data.cadence = manifest.cadence;

    const int wanted = opt.train_scenes + opt.val_scenes + opt.test_scenes;
    if (static_cast<int>(manifest.scenes.size()) < wanted)
        throw DataError("data directory has " + std::to_string(manifest.scenes.size()) + " scenes, config wants " +
                        std::to_string(wanted));

    for (int k = 0; k < wanted; ++k) {
        const SceneEntry& entry = manifest.scenes[static_cast<std::size_t>(k)];
        const FrameSequence radar = load_radar_scene(dir, entry, manifest.cadence);

        // Availability screening within the scene's epoch range.
        std::vector<StationSeries> stations;
        for (const auto& [id, series] : by_id) {
            std::size_t present = 0;
            for (const std::int64_t e : radar.epochs)
                if (std::binary_search(series.epochs.begin(), series.epochs.end(), e)) ++present;
            if (present == 0) continue;
            if (static_cast<double>(present) / static_cast<double>(radar.size()) >= opt.station_min_availability)
                stations.push_back(series);
        }
        if (stations.empty()) throw DataError("scene " + std::to_string(entry.id) + " has no usable stations");

        const FrameSequence pwv =
            grid_pwv_sequence(stations, radar.epochs, manifest.grid, manifest.cadence, opt.station_carry_s);

        PriorGenerator gen;
        if (opt.prior_mode == "stored") {
            gen = stored_prior_reader(dir);
        } else if (opt.prior_mode == "generate") {
            gen = make_prior_generator(opt.prior, entry.seed);
        } else {
            throw ConfigError("unknown prior mode '" + opt.prior_mode + "' (expected generate|stored)");
        }

        auto windows = make_windows(radar, pwv, nullptr, gen, opt.t_in, opt.t_out);
        auto& split = (k < opt.train_scenes)                    ? data.train
                      : (k < opt.train_scenes + opt.val_scenes) ? data.val
                                                                : data.test;
        for (auto& w : windows) split.push_back(std::move(w));
    }
    return data;
}

// Writes echo-extrapolation priors for every valid window anchor of every
// scene into the per-anchor store.
inline std::size_t write_prior_store(const std::string& dir, const LoadOptions& opt) {
    const Manifest manifest = read_manifest(dir);
    std::size_t written = 0;
    for (const SceneEntry& entry : manifest.scenes) {
        const FrameSequence radar = load_radar_scene(dir, entry, manifest.cadence);
        const PriorGenerator gen = make_prior_generator(opt.prior, entry.seed);
        const std::size_t span = static_cast<std::size_t>(opt.t_in + opt.t_out);
        if (radar.size() < span) continue;
        for (std::size_t anchor = 0; anchor + span <= radar.size(); ++anchor) {
            const FrameSequence hist = radar.slice(anchor, static_cast<std::size_t>(opt.t_in));
            const FrameSequence prior = gen(hist, opt.t_out);
            const std::string subdir = dir + "/prior/" + std::to_string(hist.epochs.back());
            std::filesystem::create_directories(subdir);
            for (std::size_t f = 0; f < prior.size(); ++f) {
                save_grid(subdir + "/" + std::to_string(prior.epochs[f]) + ".fgrid", prior.frames[f],
                          prior.epochs[f], Unit::MillimetersPerHour);
                ++written;
            }
        }
    }
    return written;
}

}  // namespace fusioncast
