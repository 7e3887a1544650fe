// ledit: batch front end for the toy latent-diffusion editing engine.
// Subcommands: train, invert, edit, attnviz, eval. All interaction is via
// files and flags; every run directory gets a manifest with the effective
// configuration, the seed and the checkpoint hash so runs can be replayed.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ledit/eval.hpp"
#include "ledit/fusion.hpp"
#include "ledit/serialize.hpp"
#include "ledit/trainer.hpp"

namespace fs = std::filesystem;
using ledit::json;

namespace {

struct TrainArgs {
    std::string out;
    int steps = 2400, batch = 4;
    double lr = 3e-3;
    double cond_drop = 0.1;
    int holdout_probes = 48;
    std::uint64_t seed = 1;
    std::uint64_t dataset_seed = 7;
    int dataset_size = 240;
    int dump_samples = 0;
    // architecture
    std::size_t grid_h = 16, grid_w = 16, channels = 4;
    std::string stage_widths = "16,32,48";
    std::size_t cross_dim = 16;
    int base_steps = 100;
    std::size_t mlp_ratio = 2;
    std::size_t prompt_length = 8;
};

struct InvertArgs {
    std::string checkpoint, image, prompt, kind = "di", out;
    int steps = 50;
    int nti_steps = 10;
    double eta = 2e-4;
    double guidance = 7.5;
};

struct EditArgs {
    std::string checkpoint, pipeline = "masafusion", image, source_prompt, target_prompt;
    std::string mask, condition, condition_kind = "sketch";
    std::string kind = "di", init_mode = "gaussian", interval = "full", layers, edited;
    double guidance = 7.5, adapter_strength = 1.0, eta = 2e-4;
    int steps = 50, nti_steps = 10, turns = 1;
    std::uint64_t seed = 0;
    bool verify = false;
    std::string out;
};

struct AttnvizArgs {
    std::string checkpoint, image, prompt, layer = "enc0", out;
    int t = 25;
};

struct EvalArgs {
    std::string rows, out;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(s)) out.push_back(std::stoul(item));
    return out;
}

std::string env_checkpoint() {
    const char* v = std::getenv("LEDIT_CHECKPOINT");
    return v ? v : "";
}

std::string require_checkpoint(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    std::string env = env_checkpoint();
    if (!env.empty()) return env;
    throw ledit::ConfigError("no checkpoint: pass --checkpoint or set LEDIT_CHECKPOINT");
}

void write_manifest(const fs::path& dir, const json& manifest) {
    fs::create_directories(dir);
    std::ofstream f(dir / "manifest.json");
    if (!f) throw ledit::IoError("cannot write manifest in " + dir.string());
    f << manifest.dump(2) << '\n';
}

ledit::NoiseSchedule inference_schedule(const ledit::DenoiserConfig& cfg, int steps) {
    ledit::NoiseSchedule base = ledit::make_schedule_rescaled(cfg.base_steps);
    if (steps == cfg.base_steps) return base;
    return ledit::subsample_schedule(base, steps);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const TrainArgs& a) {
    ledit::DenoiserConfig dc;
    dc.grid_h = a.grid_h;
    dc.grid_w = a.grid_w;
    dc.channels = a.channels;
    dc.stage_widths = parse_size_list(a.stage_widths);
    dc.cross_dim = a.cross_dim;
    dc.base_steps = a.base_steps;
    dc.mlp_ratio = a.mlp_ratio;
    dc.validate();

    ledit::Vocabulary vocab = ledit::Vocabulary::toy_default();
    ledit::Checkpoint ckpt;
    ckpt.vocab_tokens = vocab.tokens;
    ckpt.prompt_length = a.prompt_length;
    ckpt.train_seed = a.seed;
    ledit::TextEncoderConfig etc;
    etc.length = a.prompt_length;
    etc.dim = dc.cross_dim;
    etc.seed = ckpt.encoder_seed;
    ledit::CausalTextEncoder encoder(vocab, etc);

    ledit::ToyDatasetConfig tdc;
    tdc.grid_h = dc.grid_h;
    tdc.grid_w = dc.grid_w;
    tdc.channels = dc.channels;
    tdc.prompt_length = a.prompt_length;
    auto data = ledit::make_toy_dataset(vocab, a.dataset_seed,
                                        static_cast<std::size_t>(a.dataset_size), tdc);

    ledit::NoiseSchedule sched = ledit::make_schedule_rescaled(dc.base_steps);
    ledit::TrainConfig tc;
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.lr = a.lr;
    tc.seed = a.seed;
    tc.cond_drop = a.cond_drop;
    tc.holdout_probes = a.holdout_probes;

    std::cerr << "training " << a.steps << " steps on " << data.size() << " samples...\n";
    ledit::Denoiser init(ledit::DenoiserWeights::init(dc, a.seed));
    ledit::TrainOutput trained = ledit::train(init, encoder, data, sched, tc);
    ckpt.weights = trained.weights;

    ledit::save_checkpoint(a.out, ckpt);
    {
        std::ofstream f(fs::path(a.out) / "loss_trace.txt");
        for (const auto& [step, loss] : trained.report.loss_trace)
            f << step << ' ' << loss << '\n';
    }
    if (a.dump_samples > 0) {
        fs::create_directories(fs::path(a.out) / "samples");
        for (int i = 0; i < a.dump_samples && i < static_cast<int>(data.size()); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "sample_%03d", i);
            ledit::tdump_save(
                (fs::path(a.out) / "samples" / (std::string(name) + ".tdump")).string(),
                data[static_cast<std::size_t>(i)].image);
            std::ofstream p(fs::path(a.out) / "samples" / (std::string(name) + ".prompt"));
            p << data[static_cast<std::size_t>(i)].prompt << '\n';
        }
    }

    // append the training record to the checkpoint manifest
    json manifest;
    {
        std::ifstream mf(fs::path(a.out) / "manifest.json");
        mf >> manifest;
    }
    manifest["training"] = {{"steps", a.steps},
                            {"batch", a.batch},
                            {"lr", a.lr},
                            {"cond_drop", a.cond_drop},
                            {"holdout_probes", a.holdout_probes},
                            {"seed", a.seed},
                            {"dataset_seed", a.dataset_seed},
                            {"dataset_size", a.dataset_size},
                            {"holdout_before", trained.report.holdout_before},
                            {"holdout_after", trained.report.holdout_after},
                            {"checkpoint_hash", ledit::checkpoint_hash(a.out)}};
    write_manifest(a.out, manifest);
    std::cout << "checkpoint written to " << a.out << " (holdout "
              << trained.report.holdout_before << " -> " << trained.report.holdout_after
              << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// invert
// ---------------------------------------------------------------------------

int run_invert(const InvertArgs& a) {
    const std::string ckpt_dir = require_checkpoint(a.checkpoint);
    ledit::Checkpoint ckpt = ledit::load_checkpoint(ckpt_dir);
    ledit::Denoiser den(ckpt.weights);
    ledit::CausalTextEncoder enc = ckpt.make_encoder();
    ledit::NoiseSchedule sched = inference_schedule(den.config(), a.steps);

    ledit::Tensor x0 = ledit::tdump_load(a.image);
    ledit::PromptEmbedding cond = enc.encode_prompt(a.prompt);
    ledit::NullEmbedding null = enc.null_embedding();

    ledit::InversionResult inv;
    if (a.kind == "nti") {
        ledit::NtiConfig nc;
        nc.inner_steps = a.nti_steps;
        nc.eta = a.eta;
        nc.guidance = a.guidance;
        inv = ledit::null_text_inversion(den, x0, cond, null, nc, sched);
    } else {
        inv = ledit::direct_inversion(den, x0, cond, null, sched, a.guidance);
    }

    json echo = {{"image", a.image},
                 {"prompt", a.prompt},
                 {"kind", a.kind},
                 {"steps", a.steps},
                 {"nti_steps", a.nti_steps},
                 {"eta", a.eta},
                 {"guidance", a.guidance},
                 {"checkpoint_hash", ledit::checkpoint_hash(ckpt_dir)}};
    ledit::save_inversion(a.out, inv, echo);
    std::cout << "inversion (" << a.kind << ") written to " << a.out << ", nfe=" << inv.nfe
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// edit
// ---------------------------------------------------------------------------

json stats_to_json(const ledit::RegionStats& st) {
    return {{"mean_abs_in", st.mean_abs_in}, {"mean_abs_out", st.mean_abs_out},
            {"l2_in", st.l2_in},             {"l2_out", st.l2_out},
            {"pixels_in", st.pixels_in},     {"pixels_out", st.pixels_out}};
}

int run_edit(const EditArgs& a) {
    const std::string ckpt_dir = require_checkpoint(a.checkpoint);
    ledit::Checkpoint ckpt = ledit::load_checkpoint(ckpt_dir);
    ledit::Denoiser den(ckpt.weights);
    ledit::CausalTextEncoder enc = ckpt.make_encoder();
    ledit::ConditionEncoder adapter = ckpt.make_adapter();
    ledit::NoiseSchedule sched = inference_schedule(den.config(), a.steps);
    ledit::EditContext ctx{den, sched, enc, &adapter};

    const bool needs_mask = a.pipeline != "embctrl";
    const bool needs_condition = a.pipeline == "masafusion";
    if (needs_mask && a.mask.empty()) throw ledit::ConfigError(a.pipeline + " requires --mask");
    if (needs_condition && a.condition.empty())
        throw ledit::ConfigError("masafusion requires --condition");

    // multi-turn runs need explicit per-turn inputs
    auto mask_files = split_list(a.mask);
    auto cond_files = split_list(a.condition);
    if (a.turns > 1) {
        if (needs_mask && static_cast<int>(mask_files.size()) != a.turns)
            throw ledit::ConfigError("multi-turn edit needs one --mask file per turn");
        if (needs_condition && static_cast<int>(cond_files.size()) != a.turns)
            throw ledit::ConfigError("multi-turn edit needs one --condition file per turn");
    }

    ledit::EditConfig ecfg;
    if (a.init_mode == "gaussian" || a.init_mode == "sweep")
        ecfg.init_mode = ledit::EditConfig::InitMode::gaussian;
    else if (a.init_mode == "source_noise")
        ecfg.init_mode = ledit::EditConfig::InitMode::source_noise;
    else
        ecfg.init_mode = ledit::EditConfig::InitMode::blend;
    if (a.interval == "none") {
        ecfg.interval_end = 0;
    } else if (a.interval != "full") {
        const auto colon = a.interval.find(':');
        if (colon == std::string::npos)
            throw ledit::ConfigError("--interval expects a:b, full or none");
        ecfg.interval_begin = std::stoi(a.interval.substr(0, colon));
        ecfg.interval_end = std::stoi(a.interval.substr(colon + 1));
    }
    ecfg.layer_sites = split_list(a.layers);
    ecfg.guidance = a.guidance;
    ecfg.adapter_strength = a.adapter_strength;
    ecfg.seed = a.seed;
    ecfg.verify_substitution = a.verify;
    ledit::validate(ecfg, sched.steps);

    const ledit::InversionKind kind =
        a.kind == "nti" ? ledit::InversionKind::nti : ledit::InversionKind::di;
    ledit::NtiConfig nti;
    nti.inner_steps = a.nti_steps;
    nti.eta = a.eta;
    nti.guidance = a.guidance;

    ledit::Tensor source = ledit::tdump_load(a.image);
    const std::string ckpt_hash = ledit::checkpoint_hash(ckpt_dir);

    json turns_summary = json::array();
    for (int turn = 1; turn <= a.turns; ++turn) {
        char turn_name[24];
        std::snprintf(turn_name, sizeof(turn_name), "turn_%02d", turn);
        const fs::path turn_dir = a.turns > 1 ? fs::path(a.out) / turn_name : fs::path(a.out);
        fs::create_directories(turn_dir);

        ledit::MaskRegion mask;
        if (needs_mask) {
            const auto& file = mask_files[static_cast<std::size_t>(
                std::min<int>(turn - 1, static_cast<int>(mask_files.size()) - 1))];
            mask = ledit::mask_load(file);
        }
        ledit::ExternalCondition cond_ext;
        if (needs_condition) {
            const auto& file = cond_files[static_cast<std::size_t>(
                std::min<int>(turn - 1, static_cast<int>(cond_files.size()) - 1))];
            cond_ext = ledit::condition_from_mask(ledit::mask_load(file),
                                                  ledit::condition_kind_from(a.condition_kind));
        }

        ledit::PromptEmbedding condS = enc.encode_prompt(a.source_prompt);
        ledit::PromptEmbedding condT = enc.encode_prompt(a.target_prompt);

        json extra = json::object();
        ledit::EditResult res;
        if (a.pipeline == "masafusion") {
            if (a.init_mode == "sweep" && turn == 1) {
                // initial-noise harness: generate the intermediate under all
                // three initializations and log the pairwise distances
                ledit::NullEmbedding null_plain = enc.null_embedding();
                ledit::InversionResult inv =
                    kind == ledit::InversionKind::nti
                        ? ledit::null_text_inversion(den, source, condS, null_plain, nti, sched)
                        : ledit::direct_inversion(den, source, condS, null_plain, sched,
                                                  ecfg.guidance);
                std::vector<ledit::Tensor> inters;
                const char* names[3] = {"gaussian", "source_noise", "blend"};
                ledit::EditConfig sweep_cfg = ecfg;
                for (auto mode : {ledit::EditConfig::InitMode::gaussian,
                                  ledit::EditConfig::InitMode::source_noise,
                                  ledit::EditConfig::InitMode::blend}) {
                    sweep_cfg.init_mode = mode;
                    ledit::RngStream rng(sweep_cfg.seed);
                    auto inter = ledit::generate_intermediate(ctx, inv, mask, condS, condT,
                                                              cond_ext, sweep_cfg, rng);
                    inters.push_back(inter.trajectory[0]);
                }
                json dist = json::object();
                for (int i = 0; i < 3; ++i)
                    for (int j = i + 1; j < 3; ++j)
                        dist[std::string(names[i]) + "_vs_" + names[j]] =
                            ledit::l2_distance(inters[static_cast<std::size_t>(i)],
                                               inters[static_cast<std::size_t>(j)]);
                extra["init_mode_sweep"] = dist;
                for (int i = 0; i < 3; ++i)
                    ledit::tdump_save((turn_dir / (std::string("intermediate_") + names[i] +
                                                   ".tdump"))
                                          .string(),
                                      inters[static_cast<std::size_t>(i)]);
            }
            res = ledit::masafusion_edit(ctx, source, condS, condT, mask, cond_ext, kind, ecfg,
                                         nti);
        } else if (a.pipeline == "no-adapter") {
            res = ledit::edit_without_adapter(ctx, source, condS, condT, mask, kind, ecfg, nti);
        } else {
            ledit::TokenSequence src_tokens =
                ledit::tokenize(enc.vocab(), a.source_prompt, ckpt.prompt_length);
            ledit::TokenSequence tgt_tokens =
                ledit::tokenize(enc.vocab(), a.target_prompt, ckpt.prompt_length);
            std::set<std::size_t> edited;
            if (a.edited.empty()) {
                edited = ledit::differing_positions(src_tokens, tgt_tokens);
            } else {
                for (const auto& tok : split_list(a.edited)) edited.insert(std::stoul(tok));
            }
            extra["edited_indices"] = std::vector<std::size_t>(edited.begin(), edited.end());
            res = ledit::embctrl_edit(ctx, source, src_tokens, tgt_tokens, edited, kind, ecfg,
                                      nti, nullptr);
        }

        ledit::tdump_save((turn_dir / "target.tdump").string(), res.target_image);
        ledit::save_image_pgms((turn_dir / "target").string(), res.target_image);
        ledit::tdump_save((turn_dir / "source_recon.tdump").string(), res.source_recon);
        if (res.intermediate_image) {
            ledit::tdump_save((turn_dir / "intermediate.tdump").string(),
                              *res.intermediate_image);
            ledit::save_image_pgms((turn_dir / "intermediate").string(),
                                   *res.intermediate_image);
        }
        if (res.degenerate_mask_warning)
            std::cerr
                << "warning: mask covers the whole grid; texture retention is not promised\n";

        json manifest;
        manifest["command"] = "edit";
        manifest["turn"] = turn;
        manifest["config"] = {{"pipeline", a.pipeline},
                              {"image", a.image},
                              {"source_prompt", a.source_prompt},
                              {"target_prompt", a.target_prompt},
                              {"mask", a.mask},
                              {"condition", a.condition},
                              {"condition_kind", a.condition_kind},
                              {"kind", a.kind},
                              {"init_mode", a.init_mode},
                              {"interval", a.interval},
                              {"layers", a.layers},
                              {"guidance", a.guidance},
                              {"adapter_strength", a.adapter_strength},
                              {"steps", a.steps},
                              {"nti_steps", a.nti_steps},
                              {"eta", a.eta},
                              {"turns", a.turns},
                              {"verify", a.verify}};
        manifest["seed"] = ecfg.seed;
        manifest["checkpoint_hash"] = ckpt_hash;
        manifest["nfe"] = res.nfe;
        if (res.stats) manifest["region_stats"] = stats_to_json(*res.stats);
        manifest["degenerate_mask"] = res.degenerate_mask_warning;
        if (res.checks.ran) {
            manifest["substitution_checks"] = {{"maps_bitwise", res.checks.maps_bitwise},
                                               {"stitch_max_err", res.checks.stitch_max_err}};
            if (!res.checks.maps_bitwise || res.checks.stitch_max_err != 0.0)
                throw ledit::HookError("substitution exactness check failed");
        }
        if (!res.nti_objective_traces.empty())
            manifest["nti_objective_traces"] = res.nti_objective_traces;
        for (const auto& [k, v] : extra.items()) manifest[k] = v;
        write_manifest(turn_dir, manifest);
        turns_summary.push_back({{"turn", turn}, {"nfe", res.nfe}});

        // the next turn edits the previous output artifact (re-read from the
        // dump so a chained run equals replaying the written files)
        source = ledit::tdump_load((turn_dir / "target.tdump").string());
        ecfg.seed = ledit::RngStream::word_at(ecfg.seed, static_cast<std::uint64_t>(turn));
    }

    if (a.turns > 1) {
        json top;
        top["command"] = "edit";
        top["turns"] = turns_summary;
        top["checkpoint_hash"] = ckpt_hash;
        write_manifest(a.out, top);
    }
    std::cout << "edit (" << a.pipeline << ", " << a.kind << ") written to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// attnviz
// ---------------------------------------------------------------------------

int run_attnviz(const AttnvizArgs& a) {
    const std::string ckpt_dir = require_checkpoint(a.checkpoint);
    ledit::Checkpoint ckpt = ledit::load_checkpoint(ckpt_dir);
    ledit::Denoiser den(ckpt.weights);
    ledit::CausalTextEncoder enc = ckpt.make_encoder();
    const auto& dc = den.config();

    std::optional<ledit::DenoiserConfig::BlockRef> block;
    for (const auto& b : dc.blocks())
        if (b.path == a.layer) block = b;
    if (!block) throw ledit::ConfigError("unknown layer: " + a.layer);
    if (a.t < 0 || a.t > dc.base_steps)
        throw ledit::StepError("timestep outside the model table");

    ledit::Tensor x = ledit::tdump_load(a.image);
    ledit::PromptEmbedding cond = enc.encode_prompt(a.prompt);
    ledit::NullEmbedding null = enc.null_embedding();

    const std::string site = a.layer + ".cross";
    ledit::HookSet hooks;
    hooks.capture(ledit::AttnKind::cross_attn, /*with_maps=*/true, {site});
    auto pred = den.predict_noise(a.t, x, cond, null, {7.5}, nullptr, &hooks);
    const ledit::AttnRecord& rec = pred.cache.require({a.t, site, ledit::Branch::conditional});
    const ledit::Tensor& p = *rec.p; // pixels x tokens

    fs::create_directories(a.out);
    ledit::tdump_save((fs::path(a.out) / "probs.tdump").string(), p);

    // each pixel's row across tokens must sum to 1 before rendering
    double worst = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) s += p.at2(i, j);
        worst = std::max(worst, std::fabs(s - 1.0));
    }
    if (worst > 1e-6) throw ledit::ContractError("attention rows do not sum to 1");

    const std::size_t lh = dc.level_h(block->level), lw = dc.level_w(block->level);
    json tokens = json::array();
    for (std::size_t j = 0; j < p.cols(); ++j) {
        ledit::Tensor plane({lh, lw});
        double mx = 0.0;
        for (std::size_t i = 0; i < p.rows(); ++i) mx = std::max(mx, p.at2(i, j));
        for (std::size_t i = 0; i < p.rows(); ++i) plane[i] = p.at2(i, j);
        std::string tok =
            enc.vocab().tokens[static_cast<std::size_t>(cond.source_tokens.ids[j])];
        for (auto& ch : tok)
            if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
        char name[64];
        std::snprintf(name, sizeof(name), "token_%02zu_%s.pgm", j, tok.c_str());
        // per-map max normalization for visibility
        ledit::write_pgm((fs::path(a.out) / name).string(), plane, 0.0, mx > 0 ? mx : 1.0);
        tokens.push_back({{"index", j}, {"token", tok}, {"max_mass", mx}});
    }

    json manifest;
    manifest["command"] = "attnviz";
    manifest["config"] = {{"image", a.image}, {"prompt", a.prompt}, {"t", a.t},
                          {"layer", a.layer}};
    manifest["row_sum_max_err"] = worst;
    manifest["tokens"] = tokens;
    manifest["checkpoint_hash"] = ledit::checkpoint_hash(ckpt_dir);
    write_manifest(a.out, manifest);
    std::cout << "cross-attention maps for " << p.cols() << " tokens written to " << a.out
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int run_eval(const EvalArgs& a) {
    auto rows = ledit::load_metric_csv(a.rows);
    ledit::RankTable table;
    if (rows.size() == 1) {
        // a lone method trivially ranks first on every metric
        table.methods = {rows[0].method};
        table.ranks = {{1.0, 1.0, 1.0, 1.0, 1.0}};
        table.average = {1.0};
    } else {
        table = ledit::rank_table(rows);
    }
    ledit::write_rank_table_text(std::cout, table);
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        std::ofstream csv(fs::path(a.out) / "rank_table.csv");
        ledit::write_rank_table_csv(csv, table);
        std::ofstream txt(fs::path(a.out) / "rank_table.txt");
        ledit::write_rank_table_text(txt, table);
        json manifest;
        manifest["command"] = "eval";
        manifest["config"] = {{"rows", a.rows}};
        manifest["best_method"] = table.methods[table.best()];
        write_manifest(a.out, manifest);
    }
    return 0;
}

// key=value configuration files: unknown keys are rejected with a diagnostic
// naming the key; command-line flags override file values
std::vector<std::pair<std::string, std::string>> read_config_pairs(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ledit::IoError("cannot open config file: " + path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ledit::ConfigError("config line " + std::to_string(lineno) +
                                     ": expected key=value");
        pairs.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return pairs;
}

} // namespace

int main(int argc, char** argv) {
    TrainArgs train_args;
    InvertArgs invert_args;
    EditArgs edit_args;
    AttnvizArgs attnviz_args;
    EvalArgs eval_args;
    std::string config_file;

    CLI::App app{"desk-scale latent-diffusion editing engine"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train the toy denoiser, write a checkpoint");
    train_cmd->add_option("--config", config_file, "key=value config file");
    train_cmd->add_option("--out", train_args.out)->required();
    train_cmd->add_option("--steps", train_args.steps);
    train_cmd->add_option("--batch", train_args.batch);
    train_cmd->add_option("--lr", train_args.lr);
    train_cmd->add_option("--cond-drop", train_args.cond_drop);
    train_cmd->add_option("--holdout-probes", train_args.holdout_probes);
    train_cmd->add_option("--seed", train_args.seed);
    train_cmd->add_option("--dataset-seed", train_args.dataset_seed);
    train_cmd->add_option("--dataset-size", train_args.dataset_size);
    train_cmd->add_option("--dump-samples", train_args.dump_samples);
    train_cmd->add_option("--grid-h", train_args.grid_h);
    train_cmd->add_option("--grid-w", train_args.grid_w);
    train_cmd->add_option("--channels", train_args.channels);
    train_cmd->add_option("--stage-widths", train_args.stage_widths);
    train_cmd->add_option("--cross-dim", train_args.cross_dim);
    train_cmd->add_option("--base-steps", train_args.base_steps);
    train_cmd->add_option("--mlp-ratio", train_args.mlp_ratio);
    train_cmd->add_option("--prompt-length", train_args.prompt_length);

    auto* invert_cmd = app.add_subcommand("invert", "invert a latent image to initial noise");
    invert_cmd->add_option("--config", config_file);
    invert_cmd->add_option("--checkpoint", invert_args.checkpoint);
    invert_cmd->add_option("--image", invert_args.image)->required();
    invert_cmd->add_option("--prompt", invert_args.prompt)->required();
    invert_cmd->add_option("--kind", invert_args.kind)->check(CLI::IsMember({"nti", "di"}));
    invert_cmd->add_option("--steps", invert_args.steps);
    invert_cmd->add_option("--nti-steps", invert_args.nti_steps);
    invert_cmd->add_option("--eta", invert_args.eta);
    invert_cmd->add_option("--guidance", invert_args.guidance);
    invert_cmd->add_option("--out", invert_args.out)->required();

    auto* edit_cmd = app.add_subcommand("edit", "run an editing pipeline");
    edit_cmd->add_option("--config", config_file);
    edit_cmd->add_option("--checkpoint", edit_args.checkpoint);
    edit_cmd->add_option("--pipeline", edit_args.pipeline)
        ->check(CLI::IsMember({"masafusion", "no-adapter", "embctrl"}));
    edit_cmd->add_option("--image", edit_args.image)->required();
    edit_cmd->add_option("--source-prompt", edit_args.source_prompt)->required();
    edit_cmd->add_option("--target-prompt", edit_args.target_prompt)->required();
    edit_cmd->add_option("--mask", edit_args.mask);
    edit_cmd->add_option("--condition", edit_args.condition);
    edit_cmd->add_option("--condition-kind", edit_args.condition_kind)
        ->check(CLI::IsMember({"sketch", "pose-analog", "canny-analog"}));
    edit_cmd->add_option("--kind", edit_args.kind)->check(CLI::IsMember({"nti", "di"}));
    edit_cmd->add_option("--init-mode", edit_args.init_mode)
        ->check(CLI::IsMember({"gaussian", "source_noise", "blend", "sweep"}));
    edit_cmd->add_option("--interval", edit_args.interval);
    edit_cmd->add_option("--layers", edit_args.layers);
    edit_cmd->add_option("--edited", edit_args.edited);
    edit_cmd->add_option("--guidance", edit_args.guidance);
    edit_cmd->add_option("--adapter-strength", edit_args.adapter_strength);
    edit_cmd->add_option("--steps", edit_args.steps);
    edit_cmd->add_option("--nti-steps", edit_args.nti_steps);
    edit_cmd->add_option("--eta", edit_args.eta);
    edit_cmd->add_option("--turns", edit_args.turns);
    edit_cmd->add_option("--seed", edit_args.seed);
    edit_cmd->add_option("--verify", edit_args.verify);
    edit_cmd->add_option("--out", edit_args.out)->required();

    auto* attnviz_cmd = app.add_subcommand("attnviz", "render per-token cross-attention maps");
    attnviz_cmd->add_option("--config", config_file);
    attnviz_cmd->add_option("--checkpoint", attnviz_args.checkpoint);
    attnviz_cmd->add_option("--image", attnviz_args.image)->required();
    attnviz_cmd->add_option("--prompt", attnviz_args.prompt)->required();
    attnviz_cmd->add_option("--t", attnviz_args.t);
    attnviz_cmd->add_option("--layer", attnviz_args.layer);
    attnviz_cmd->add_option("--out", attnviz_args.out)->required();

    auto* eval_cmd = app.add_subcommand("eval", "rank a metric table");
    eval_cmd->add_option("--rows", eval_args.rows)->required();
    eval_cmd->add_option("--out", eval_args.out);

    std::vector<std::string> args(argv + 1, argv + argc);
    std::string cfg_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
    }
    if (!cfg_path.empty() && !args.empty()) {
        CLI::App* sub = nullptr;
        for (auto* s : {train_cmd, invert_cmd, edit_cmd, attnviz_cmd, eval_cmd})
            if (s->get_name() == args[0]) sub = s;
        if (sub) {
            std::vector<std::pair<std::string, std::string>> pairs;
            try {
                pairs = read_config_pairs(cfg_path);
            } catch (const ledit::Error& e) {
                std::cerr << "error: " << e.what() << "\n";
                return 2;
            }
            std::vector<std::string> extra;
            for (const auto& [key, value] : pairs) {
                const std::string flag = "--" + key;
                if (!sub->get_option_no_throw(flag)) {
                    std::cerr << "error: unknown config key: " << key << "\n";
                    return 2;
                }
                bool on_cmdline = false;
                for (const auto& arg : args)
                    if (arg == flag || arg.rfind(flag + "=", 0) == 0) on_cmdline = true;
                if (on_cmdline) continue;
                extra.push_back(flag);
                extra.push_back(value);
            }
            args.insert(args.begin() + 1, extra.begin(), extra.end());
        }
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train_cmd->parsed()) return run_train(train_args);
        if (invert_cmd->parsed()) return run_invert(invert_args);
        if (edit_cmd->parsed()) return run_edit(edit_args);
        if (attnviz_cmd->parsed()) return run_attnviz(attnviz_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
