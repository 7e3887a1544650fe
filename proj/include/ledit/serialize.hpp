#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ledit/denoiser.hpp"
#include "ledit/inversion.hpp"
#include "ledit/tensor.hpp"
#include "ledit/text_encoder.hpp"

namespace ledit {

using json = nlohmann::json;

inline json to_json(const DenoiserConfig& c) {
    return json{{"grid_h", c.grid_h},         {"grid_w", c.grid_w},
                {"channels", c.channels},     {"stage_widths", c.stage_widths},
                {"cross_dim", c.cross_dim},   {"base_steps", c.base_steps},
                {"mlp_ratio", c.mlp_ratio}};
}

inline DenoiserConfig denoiser_config_from_json(const json& j) {
    DenoiserConfig c;
    c.grid_h = j.at("grid_h").get<std::size_t>();
    c.grid_w = j.at("grid_w").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.stage_widths = j.at("stage_widths").get<std::vector<std::size_t>>();
    c.cross_dim = j.at("cross_dim").get<std::size_t>();
    c.base_steps = j.at("base_steps").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    return c;
}

/// Everything needed to reconstruct a full editing stack: the trained
/// denoiser weights plus the (seed-determined) encoder and adapter setup.
struct Checkpoint {
    DenoiserWeights weights;
    std::vector<std::string> vocab_tokens;
    std::size_t prompt_length = 8;
    std::uint64_t encoder_seed = 0x7e57c0de;
    std::uint64_t adapter_seed = 0xadaf7e42;
    std::uint64_t train_seed = 0;

    Vocabulary vocabulary() const { return Vocabulary{vocab_tokens}; }

    CausalTextEncoder make_encoder() const {
        TextEncoderConfig tc;
        tc.length = prompt_length;
        tc.dim = weights.config.cross_dim;
        tc.seed = encoder_seed;
        return CausalTextEncoder(vocabulary(), tc);
    }

    ConditionEncoder make_adapter() const {
        return ConditionEncoder(weights.config.grid_h, weights.config.grid_w,
                                weights.config.injection_sites(), adapter_seed);
    }
};

inline void save_checkpoint(const std::string& dir, const Checkpoint& c) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "ledit-checkpoint-v1";
    manifest["config"] = to_json(c.weights.config);
    manifest["vocab"] = c.vocab_tokens;
    manifest["prompt_length"] = c.prompt_length;
    manifest["encoder_seed"] = c.encoder_seed;
    manifest["adapter_seed"] = c.adapter_seed;
    manifest["train_seed"] = c.train_seed;
    json tensors = json::object();
    for (const auto& [name, t] : c.weights.tensors) {
        std::string file = name + ".tdump";
        for (auto& ch : file)
            if (ch == '/' ) ch = '_';
        tdump_save((fs::path(dir) / file).string(), t);
        tensors[name] = file;
    }
    manifest["tensors"] = tensors;
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("cannot write checkpoint manifest in " + dir);
    f << manifest.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("cannot open checkpoint manifest in " + dir);
    json manifest;
    try {
        f >> manifest;
    } catch (const json::exception& e) {
        throw IoError("bad checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "ledit-checkpoint-v1")
        throw IoError("unsupported checkpoint format in " + dir);
    Checkpoint c;
    c.weights.config = denoiser_config_from_json(manifest.at("config"));
    c.vocab_tokens = manifest.at("vocab").get<std::vector<std::string>>();
    c.prompt_length = manifest.at("prompt_length").get<std::size_t>();
    c.encoder_seed = manifest.at("encoder_seed").get<std::uint64_t>();
    c.adapter_seed = manifest.at("adapter_seed").get<std::uint64_t>();
    c.train_seed = manifest.at("train_seed").get<std::uint64_t>();
    for (const auto& [name, file] : manifest.at("tensors").items())
        c.weights.tensors[name] = tdump_load((fs::path(dir) / file.get<std::string>()).string());
    return c;
}

/// FNV-1a over the weight tensor files; pins a run to its weights.
inline std::string checkpoint_hash(const std::string& dir) {
    namespace fs = std::filesystem;
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed_file = [&](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw IoError("cannot hash " + p.string());
        char buf[4096];
        while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
            for (std::streamsize i = 0; i < f.gcount(); ++i) {
                h ^= static_cast<unsigned char>(buf[i]);
                h *= 0x100000001b3ull;
            }
        }
    };
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".tdump") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) feed_file(p);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Inversion persistence: trajectory and null-schedule dumps plus a manifest
// with nfe and the per-timestep objective traces.
// ---------------------------------------------------------------------------

inline void save_inversion(const std::string& dir, const InversionResult& inv,
                           const json& config_echo) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    char name[32];
    for (std::size_t t = 0; t < inv.trajectory.size(); ++t) {
        std::snprintf(name, sizeof(name), "traj_%03zu.tdump", t);
        tdump_save((fs::path(dir) / name).string(), inv.trajectory[t]);
    }
    if (inv.null_schedule)
        for (std::size_t i = 0; i < inv.null_schedule->size(); ++i) {
            std::snprintf(name, sizeof(name), "null_%03zu.tdump", i + 1);
            tdump_save((fs::path(dir) / name).string(), (*inv.null_schedule)[i].matrix);
        }
    json manifest;
    manifest["format"] = "ledit-inversion-v1";
    manifest["kind"] = inv.kind == InversionKindTag::nti  ? "nti"
                       : inv.kind == InversionKindTag::di ? "di"
                                                          : "plain";
    manifest["steps"] = inv.trajectory.size() - 1;
    manifest["nfe"] = inv.nfe;
    manifest["objective_traces"] = inv.objective_traces;
    manifest["notes"] = inv.notes;
    manifest["config"] = config_echo;
    std::ofstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("cannot write inversion manifest in " + dir);
    f << manifest.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Plain-text portable graymap (P2) rendering for human inspection
// ---------------------------------------------------------------------------

/// Write one H x W plane, mapping [lo, hi] to 0..255 with clamping.
inline void write_pgm(const std::string& path, const Tensor& plane, double lo = 0.0,
                      double hi = 1.0) {
    if (plane.rank() != 2) throw ShapeError("write_pgm: rank-2 plane expected");
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P2\n" << plane.cols() << ' ' << plane.rows() << "\n255\n";
    for (std::size_t y = 0; y < plane.rows(); ++y) {
        for (std::size_t x = 0; x < plane.cols(); ++x) {
            double v = (plane.at2(y, x) - lo) / (hi - lo);
            v = std::min(1.0, std::max(0.0, v));
            f << static_cast<int>(std::lround(v * 255.0)) << (x + 1 == plane.cols() ? '\n' : ' ');
        }
    }
}

/// One PGM per channel of an H x W x C image.
inline void save_image_pgms(const std::string& prefix, const Tensor& img) {
    if (img.rank() != 3) throw ShapeError("save_image_pgms: rank-3 image expected");
    const std::size_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor plane({h, w});
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) plane.at2(y, x) = img[(y * w + x) * c + ch];
        write_pgm(prefix + "_ch" + std::to_string(ch) + ".pgm", plane);
    }
}

} // namespace ledit
