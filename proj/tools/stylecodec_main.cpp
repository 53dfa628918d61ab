// stylecodec: corpus generation, training, synthesis, evaluation and
// ablation grids for the controllable codec TTS toy system.
//
// Exit codes: 0 success, 1 runtime error, 2 invariant failure, 3 config error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "stylecodec/config.h"
#include "stylecodec/dataset.h"
#include "stylecodec/eval.h"
#include "stylecodec/model.h"
#include "stylecodec/training.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stylecodec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInvariant = 2;
constexpr int kExitConfig = 3;

class InvariantFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "YAML run configuration");
    cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set train.peak_lr=1e-3")->take_all();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw std::runtime_error("output directory " + dir.string() + " is not empty (use --force)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

struct DataDir {
    json manifest;
    DatasetConfig config;
    std::unique_ptr<CorpusWorld> world;
    std::string hash;
};

DataDir open_data(const std::string& dir) {
    DataDir d;
    d.manifest = read_manifest(dir);
    d.config = DatasetConfig::from_json(d.manifest.at("config"));
    d.world = std::make_unique<CorpusWorld>(d.config, TemplateBank::parse(d.manifest.at("templates").get<std::string>()));
    d.hash = fmt::format("{:016x}", hash_string(d.manifest.dump()));
    return d;
}

Eigen::VectorXd unit(const Eigen::VectorXd& v) { return v / v.norm(); }

json attributes_json(const VotedAttributes& v, int n_emotions) {
    auto level = [&](int attr, bool speed) -> json {
        const int b = v.bins[static_cast<size_t>(attr)];
        if (b < 0 || b >= kLevelCount) return nullptr;
        return std::string(speed ? speed_name(static_cast<Level>(b)) : level_name(static_cast<Level>(b)));
    };
    json j;
    j["gender"] = v.bins[0] >= 0 ? json(std::string(gender_name(static_cast<Gender>(v.bins[0])))) : json(nullptr);
    j["pitch"] = level(1, false);
    j["speed"] = level(2, true);
    j["energy"] = level(3, false);
    j["emotion"] = v.bins[4] >= 0 && v.bins[4] < n_emotions ? json(std::string(emotion_name(v.bins[4]))) : json(nullptr);
    j["degrees"] = {{"pitch", v.degrees[0]}, {"speed", v.degrees[1]}, {"energy", v.degrees[2]}, {"emotion", v.degrees[3]}};
    return j;
}

// ---- gen-data ------------------------------------------------------------

int cmd_gen_data(const CommonOptions& co, const std::string& out, std::optional<uint64_t> seed, bool force) {
    std::vector<std::string> ov = co.overrides;
    if (seed) ov.push_back(fmt::format("data.seed={}", *seed));
    const RunConfig rc = load_run_config(co.config_path, ov);
    prepare_out_dir(out, force);
    CorpusWorld world(rc.model.data, TemplateBank::load_default());
    const Corpus corpus = generate_corpus(world);
    write_corpus(out, world, corpus);
    write_text(fs::path(out) / "config.yaml", rc.to_yaml());
    const HygieneReport h = check_split_hygiene(world, corpus);
    std::cout << fmt::format("wrote corpus to {} (seed {})\n", out, rc.model.data.seed);
    for (DataSplit s : kAllSplits) std::cout << fmt::format("  {:<22} {:>6}\n", split_name(s), corpus.split(s).size());
    if (!h.ok()) throw InvariantFailure("training split overlaps heldout templates or speakers");
    return kExitOk;
}

// ---- train ---------------------------------------------------------------

int cmd_train(const CommonOptions& co, const std::string& data, const std::string& out, const std::string& resume,
              bool force, long checkpoint_every) {
    DataDir dd = open_data(data);
    RunConfig rc = load_run_config(co.config_path, co.overrides);
    // The corpus is authoritative for the data section.
    {
        json j = rc.to_json();
        j["data"] = dd.config.to_json();
        rc = RunConfig::from_json(j);
    }
    const auto train = read_split(data, DataSplit::Train, dd.config.layout);

    std::unique_ptr<StyleCodecModel> model;
    std::optional<LoadedCheckpoint> ck;
    if (!resume.empty()) {
        ck = load_checkpoint(resume, &rc.model);
        if (ck->meta.data_hash != dd.hash) throw ConfigError("resume: checkpoint was trained on a different corpus");
        if (ck->meta.config_hash != config_hash(rc.model, rc.train)) {
            throw ConfigError("resume: resolved config differs from the checkpoint config");
        }
        model = std::move(ck->model);
        fs::create_directories(out);
    } else {
        prepare_out_dir(out, force);
        model = std::make_unique<StyleCodecModel>(rc.model, Vocabulary::build(dd.world->bank()));
    }
    write_text(fs::path(out) / "config.yaml", rc.to_yaml());

    Trainer trainer(*model, *dd.world, train, rc.train);
    if (ck) restore_trainer(*ck, trainer);
    const fs::path ckpt = fs::path(out) / "model.ckpt";
    std::ofstream log(fs::path(out) / "train_log.jsonl", std::ios::app);
    const auto t0 = std::chrono::steady_clock::now();
    trainer.run([&](const LossBreakdown& lb) {
        log << lb.to_json().dump() << '\n';
        if (lb.step % 100 == 0) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::cout << fmt::format("step {:>6} lr {:.2e} L_codec {:.4f} L_dur {:.4f} L_SMSD {:.4f} ({:.0f}s)\n", lb.step,
                                     lb.lr, lb.codec, lb.dur, lb.smsd, secs);
        }
        if (checkpoint_every > 0 && (lb.step + 1) % checkpoint_every == 0) save_checkpoint(ckpt.string(), *model, trainer, dd.hash);
    });
    trainer.run_fusion([&](const FusionLoss& fl) {
        log << fl.to_json().dump() << '\n';
        if (fl.step % 100 == 0) {
            std::cout << fmt::format("fusion {:>5} L_extractor {:.4f} L_readout {:.4f}\n", fl.step, fl.extractor, fl.readout);
        }
    });
    save_checkpoint(ckpt.string(), *model, trainer, dd.hash);
    std::cout << fmt::format("saved {} (skipped empty masks: {})\n", ckpt.string(), trainer.skipped_masks());
    const InferenceCounters& c = model->counters();
    if (c.smsd_samples != 0 || c.predicted_duration_uses != 0) {
        throw InvariantFailure("teacher forcing violated: inference-only paths were used during training");
    }
    return kExitOk;
}

// ---- synth ---------------------------------------------------------------

int cmd_synth(const std::string& ckpt_path, const std::string& style_text, const std::string& timbre_from, uint64_t seed,
              int n, const std::string& content_arg, const std::string& style_choice) {
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    StyleCodecModel& model = *ck.model;
    const DatasetConfig& dc = model.config().data;
    CorpusWorld world(dc, TemplateBank::load_default());
    Rng rng(seed);

    // Timbre prompt: a speaker id (a fresh utterance of that speaker is used
    // as the speech prompt) or a line-delimited utterance file.
    Eigen::VectorXd timbre;
    if (fs::exists(timbre_from)) {
        std::ifstream in(timbre_from);
        std::string line;
        std::getline(in, line);
        const SyntheticUtterance u = utterance_from_json(json::parse(line), dc.layout);
        timbre = model.timbre_extractor().extract(world.speech_frames(u));
    } else {
        std::string id = timbre_from;
        if (id.starts_with("speaker:")) id = id.substr(8);
        int speaker = -1;
        try {
            size_t used = 0;
            speaker = std::stoi(id, &used);
            if (used != id.size()) speaker = -1;
        } catch (const std::exception&) {
            speaker = -1;
        }
        if (speaker < 0 || speaker >= dc.n_speakers) throw std::runtime_error("unknown speaker id: " + timbre_from);
        Rng prompt_rng = rng.derive("timbre_prompt");
        UtteranceRequest req;
        req.speaker = speaker;
        const SyntheticUtterance u = synth_utterance(world, prompt_rng, req);
        timbre = model.timbre_extractor().extract(world.speech_frames(u));
    }

    std::vector<int> content;
    if (!content_arg.empty()) {
        std::istringstream is(content_arg);
        for (int p; is >> p;) content.push_back(p);
    }
    if (content.empty()) {
        Rng crng = rng.derive("content");
        const int L = crng.range(dc.min_phonemes, dc.max_phonemes);
        for (int i = 0; i < L; ++i) content.push_back(crng.range(0, dc.text_vocab - 1));
    }

    SynthesisRequest req;
    req.prompt = StylePrompt::from_text(style_text);
    if (req.prompt.tokens.empty()) throw ConfigError("--style-text must contain at least one word");
    req.content = content;
    req.timbre = unit(timbre);
    if (style_choice == "sample") req.style_choice = StyleChoice::Sample;
    else if (style_choice == "mode") req.style_choice = StyleChoice::ModeMean;
    else if (style_choice == "mean") req.style_choice = StyleChoice::MixtureMean;
    else throw ConfigError("--style must be sample, mode or mean");

    for (int i = 0; i < n; ++i) {
        Rng srng = rng.derive(static_cast<uint64_t>(i));
        const SynthesisResult res = model.synthesize(req, srng);
        json rec;
        rec["sample"] = i;
        rec["style_text"] = req.prompt.text();
        rec["all_oov"] = res.all_oov;
        rec["component"] = res.component;
        rec["attributes"] = attributes_json(res.output.attributes, dc.n_emotions);
        rec["frames"] = res.codec.frames();
        rec["durations"] = res.durations;
        rec["content"] = content;
        rec["timbre_readout"] = std::vector<double>(res.output.timbre_readout.data(),
                                                    res.output.timbre_readout.data() + res.output.timbre_readout.size());
        rec["timbre_cosine"] = res.output.timbre_readout.dot(req.timbre);
        std::cout << rec.dump() << '\n';
    }
    return kExitOk;
}

// ---- eval ----------------------------------------------------------------

void check_report(const EvalReport& r) {
    if (r.samples <= 0) throw InvariantFailure("evaluation produced no samples");
    for (const auto& a : r.accuracy) {
        const double v = a.rate();
        if (!(v >= 0.0 && v <= 1.0) || a.trials <= 0) throw InvariantFailure("accuracy outside [0, 1]");
    }
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& split_arg, int n,
             const std::string& out, uint64_t seed, bool many, int styles, int samples) {
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    StyleCodecModel& model = *ck.model;
    DataDir dd = open_data(data);
    if (!(dd.config.to_json() == model.config().data.to_json())) throw ConfigError("data directory does not match the checkpoint");
    const DataSplit split = parse_split(split_arg);
    const auto utts = read_split(data, split, dd.config.layout);
    if (utts.empty()) throw std::runtime_error("split " + split_arg + " is empty");

    Corpus corpus;
    corpus.config = dd.config;
    for (DataSplit s : kAllSplits) corpus.splits[static_cast<size_t>(s)] = read_split(data, s, dd.config.layout);
    const HygieneReport hyg = check_split_hygiene(*dd.world, corpus);

    const Rng rng(seed);
    EvalReport rep = eval_control(model, utts, n, rng.derive("control"), StyleChoice::Sample, std::string(split_name(split)));
    rep.timbre_auc = timbre_auc(model, *dd.world, utts);
    check_report(rep);
    std::vector<json> records{rep.to_json()};
    std::cout << rep.table();
    if (many) {
        for (auto [choice, tag] : {std::pair{StyleChoice::Sample, "many_to_many/full"}, std::pair{StyleChoice::ModeMean, "many_to_many/no_smsd"}}) {
            EvalReport m = eval_many_to_many(model, utts, styles, samples, rng.derive("many"), choice, tag);
            check_report(m);
            std::cout << m.table();
            records.push_back(m.to_json());
        }
    }
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream f(fs::path(out) / fmt::format("eval_{}.jsonl", split_name(split)));
        for (const auto& r : records) f << r.dump() << '\n';
        write_text(fs::path(out) / fmt::format("eval_{}.txt", split_name(split)), rep.table());
    }
    if (!hyg.ok()) throw InvariantFailure("heldout templates or speakers appear in the training split");
    return kExitOk;
}

// ---- ablate --------------------------------------------------------------

int cmd_ablate(const CommonOptions& co, const std::string& ckpt_path, const std::string& data, const std::string& grid,
               const std::string& out, bool resume) {
    std::vector<std::string> ov = co.overrides;
    if (!grid.empty()) ov.push_back("ablation.grid=" + grid);
    const RunConfig rc = load_run_config(co.config_path, ov);
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    DataDir dd = open_data(data);
    if (!(dd.config.to_json() == ck.model->config().data.to_json())) throw ConfigError("data directory does not match the checkpoint");
    const auto train = read_split(data, DataSplit::Train, dd.config.layout);
    const auto test = read_split(data, DataSplit::TestInDomain, dd.config.layout);

    fs::create_directories(out);
    AblationConfig ac = rc.ablation;
    ac.resume_path = (fs::path(out) / "ablation_rows.jsonl").string();
    if (!resume) fs::remove(ac.resume_path);
    const auto rows = run_ablations(*ck.model, *dd.world, train, test, ck.meta.train, ac);
    const std::string table = render_ablation_table(rows);
    std::cout << table;
    write_text(fs::path(out) / "ablation_table.txt", table);
    json summary = json::array();
    for (const auto& r : rows) summary.push_back(r.to_json());
    write_text(fs::path(out) / "ablation_summary.json", summary.dump(2) + "\n");
    write_text(fs::path(out) / "config.yaml", rc.to_yaml());

    for (const auto& r : rows) {
        const long expected = learnable_variance_count(r.cell.mode, r.cell.components, ck.model->config().smsd.output_dim);
        if (r.variance_entries != expected) throw InvariantFailure("variance entry count does not match the noise mode");
        if (r.cell.mode == NoiseMode::FixedIsotropic && r.sigma_before != r.sigma_after) {
            throw InvariantFailure("fixed isotropic variance changed during training");
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Style-controllable codec TTS toy system"};
    app.require_subcommand(1);

    CommonOptions gen_co;
    std::string gen_out = fs::path(default_data_root()).string();
    std::optional<uint64_t> gen_seed;
    bool gen_force = false;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus and manifest");
    add_common(gen, gen_co);
    gen->add_option("--out", gen_out, "Output dataset directory (default $STYLECODEC_DATA_ROOT or ./data)");
    gen->add_option("--seed", gen_seed, "Corpus seed (overrides data.seed)");
    gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

    CommonOptions train_co;
    std::string train_data = default_data_root(), train_out = "run", train_resume;
    bool train_force = false;
    long ckpt_every = 0;
    auto* train = app.add_subcommand("train", "Train the model on a generated corpus");
    add_common(train, train_co);
    train->add_option("--data", train_data, "Dataset directory");
    train->add_option("--out", train_out, "Run directory for checkpoint, log and config");
    train->add_option("--resume", train_resume, "Checkpoint to resume from");
    train->add_option("--checkpoint-every", ckpt_every, "Also checkpoint every N steps");
    train->add_flag("--force", train_force, "Overwrite a non-empty run directory");

    std::string synth_ckpt, synth_text, synth_timbre = "0", synth_content, synth_style = "sample";
    uint64_t synth_seed = 1;
    int synth_n = 1;
    auto* synth = app.add_subcommand("synth", "Synthesize from a style prompt and a timbre prompt");
    synth->add_option("--ckpt", synth_ckpt, "Checkpoint")->required();
    synth->add_option("--style-text", synth_text, "Style description")->required();
    synth->add_option("--timbre-from", synth_timbre, "Speaker id (N or speaker:N) or utterance .jsonl file");
    synth->add_option("--seed", synth_seed, "Sampling seed");
    synth->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--content", synth_content, "Phoneme ids, space separated (default: random)");
    synth->add_option("--style", synth_style, "Style vector choice: sample | mode | mean");

    std::string eval_ckpt, eval_data = default_data_root(), eval_split = "test_in_domain", eval_out;
    int eval_n = 300;
    uint64_t eval_seed = 19;
    bool eval_many = false;
    int eval_styles = 20, eval_samples = 8;
    auto* ev = app.add_subcommand("eval", "Score attribute control on a test split");
    ev->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
    ev->add_option("--data", eval_data, "Dataset directory");
    ev->add_option("--split", eval_split, "train | test_in_domain | test_heldout_style | test_heldout_speaker");
    ev->add_option("--n", eval_n, "Number of prompts")->check(CLI::PositiveNumber);
    ev->add_option("--out", eval_out, "Directory for the report files");
    ev->add_option("--seed", eval_seed, "Evaluation seed");
    ev->add_flag("--many-to-many", eval_many, "Also run the many-to-many diversity evaluation");
    ev->add_option("--styles", eval_styles, "Many-to-many: number of style prompts")->check(CLI::PositiveNumber);
    ev->add_option("--samples", eval_samples, "Many-to-many: samples per prompt")->check(CLI::PositiveNumber);

    CommonOptions abl_co;
    std::string abl_ckpt, abl_data = default_data_root(), abl_grid, abl_out = "ablation";
    bool abl_resume = false;
    auto* abl = app.add_subcommand("ablate", "Run the mixture-count and noise-mode grids");
    add_common(abl, abl_co);
    abl->add_option("--ckpt", abl_ckpt, "Base checkpoint")->required();
    abl->add_option("--data", abl_data, "Dataset directory");
    abl->add_option("--grid", abl_grid, "components | noise_modes | all");
    abl->add_option("--out", abl_out, "Output directory");
    abl->add_flag("--resume", abl_resume, "Keep completed grid cells from a previous run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen_data(gen_co, gen_out, gen_seed, gen_force);
        if (*train) return cmd_train(train_co, train_data, train_out, train_resume, train_force, ckpt_every);
        if (*synth) return cmd_synth(synth_ckpt, synth_text, synth_timbre, synth_seed, synth_n, synth_content, synth_style);
        if (*ev) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_n, eval_out, eval_seed, eval_many, eval_styles, eval_samples);
        if (*abl) return cmd_ablate(abl_co, abl_ckpt, abl_data, abl_grid, abl_out, abl_resume);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InvariantFailure& e) {
        std::cerr << "invariant failure: " << e.what() << '\n';
        return kExitInvariant;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
