#include "cli.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "capfuse/analysis/bpe.hpp"
#include "capfuse/analysis/report.hpp"
#include "capfuse/analysis/stats.hpp"
#include "capfuse/captions/generate.hpp"
#include "capfuse/captions/http_provider.hpp"
#include "capfuse/dataset/captions.hpp"
#include "capfuse/dataset/sampling.hpp"
#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/infer/classify.hpp"
#include "capfuse/infer/prototypes.hpp"
#include "capfuse/synthetic.hpp"
#include "capfuse/train/checkpoint.hpp"
#include "capfuse/train/trainer.hpp"

#include "config.hpp"

namespace capfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& p, const json& j) { detail::write_text_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) fail(Errc::IoError, "cannot open " + p.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(Errc::CorruptManifest, p.string() + " is not valid JSON");
    return j;
}

std::string read_text(const fs::path& p) {
    const auto bytes = detail::read_bytes(p);
    return {bytes.begin(), bytes.end()};
}

void write_plot(const fs::path& dir, const LinePlot& p) {
    detail::emit_file(dir / "plots" / (p.slug + ".svg"), render_svg(p));
    detail::emit_file(dir / "plots" / (p.slug + ".csv"), plot_csv(p));
}

// ---------------------------------------------------------------------------
// Sample manifests: {"domain": ..., "classes": [...]?, "samples": [{sample_id,
// class_name, class_id?, split?, image?}]}. Image paths are relative to the
// manifest file.

struct SampleManifest {
    std::string domain;
    std::vector<std::string> class_names;
    std::vector<SampleRecord> samples;
    std::map<std::string, fs::path> images;
};

SampleManifest load_sample_manifest(const fs::path& path) {
    const json j = read_json(path);
    SampleManifest m;
    try {
        m.domain = j.value("domain", std::string());
        const auto& arr = j.at("samples");
        if (!arr.is_array() || arr.empty()) fail(Errc::CorruptManifest, path.string() + ": no samples");
        if (j.contains("classes")) {
            m.class_names = j.at("classes").get<std::vector<std::string>>();
        } else {
            std::set<std::string> names;
            for (const auto& s : arr) names.insert(s.at("class_name").get<std::string>());
            m.class_names.assign(names.begin(), names.end());
        }
        for (const auto& s : arr) {
            SampleRecord r;
            r.sample_id = s.at("sample_id").get<std::string>();
            r.class_name = s.at("class_name").get<std::string>();
            if (s.contains("class_id")) {
                r.class_id = s.at("class_id").get<int>();
            } else {
                auto it = std::find(m.class_names.begin(), m.class_names.end(), r.class_name);
                if (it == m.class_names.end())
                    fail(Errc::CorruptManifest, "class '" + r.class_name + "' missing from the class list");
                r.class_id = static_cast<int>(it - m.class_names.begin());
            }
            if (r.class_id < 0 || static_cast<std::size_t>(r.class_id) >= m.class_names.size() ||
                m.class_names[r.class_id] != r.class_name)
                fail(Errc::CorruptManifest, "sample '" + r.sample_id + "' has inconsistent class_id/class_name");
            r.split = parse_split(s.value("split", std::string("train")));
            if (s.contains("image")) m.images[r.sample_id] = path.parent_path() / s.at("image").get<std::string>();
            m.samples.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        fail(Errc::CorruptManifest, path.string() + ": " + e.what());
    } catch (const Error& e) {
        if (e.code() == Errc::CorruptManifest) throw;
        fail(Errc::CorruptManifest, path.string() + ": " + e.what());
    }
    return m;
}

json sample_manifest_json(const std::string& domain, const EmbeddingStore& store) {
    json samples = json::array();
    for (const auto& s : store.samples())
        samples.push_back({{"sample_id", s.sample_id},
                           {"class_id", s.class_id},
                           {"class_name", s.class_name},
                           {"split", to_string(s.split)}});
    return {{"domain", domain}, {"classes", store.class_names()}, {"samples", samples}};
}

std::unique_ptr<Provider> make_provider(const RunConfig& cfg, const ProviderConfig& pcfg) {
    const auto kind = cfg.str("provider");
    if (kind == "mock") return std::make_unique<MockProvider>();
    if (kind == "http") return std::make_unique<HttpProvider>(pcfg);
    fail(Errc::ConfigError, "provider must be mock or http, got '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Shared plumbing for train / eval / sweep.

struct Inputs {
    EmbeddingStore store;
    std::vector<CaptionRecord> captions;
    CaptionIndex index;
};

bool needs_captions(const RunConfig& cfg, bool training, std::optional<InferenceMode> mode) {
    if (training && cfg.str("train.caption_mode") == "generated") return true;
    return mode && *mode != InferenceMode::Template;
}

Inputs load_inputs(const RunConfig& cfg, bool captions_required) {
    const auto store_dir = cfg.require_path("store");
    fs::path captions_path;
    if (captions_required || !cfg.path("captions").empty()) captions_path = cfg.require_path("captions");
    if (!cfg.path("fewshot.selection").empty()) cfg.require_path("fewshot.selection");
    Inputs in{load_store(store_dir), {}, {}};
    if (!captions_path.empty()) {
        in.captions = read_captions_jsonl(captions_path);
        in.index = CaptionIndex(in.captions);
    }
    return in;
}

// Training pool / caption bank: an explicit selection file wins, otherwise
// the train split is sampled with fewshot.k.
std::vector<SampleRecord> training_pool(const RunConfig& cfg, const EmbeddingStore& store) {
    const auto sel = cfg.path("fewshot.selection");
    if (!sel.empty()) {
        const json j = read_json(sel);
        std::vector<SampleRecord> out;
        try {
            for (const auto& id : j.at("sample_ids")) out.push_back(store.sample(id.get<std::string>()));
        } catch (const json::exception& e) {
            fail(Errc::CorruptManifest, sel.string() + ": " + e.what());
        }
        if (out.empty()) fail(Errc::EmptySplit, sel.string() + " selects no samples");
        return out;
    }
    const auto train = store.split(Split::Train);
    if (train.empty()) fail(Errc::EmptySplit, "store has no train samples");
    return few_shot_sample(train, cfg.few_shot(), store.num_classes()).samples;
}

struct EvalOutcome {
    EvalResult result;
    json metrics;
};

EvalOutcome evaluate_and_write(const RunConfig& cfg, const Inputs& in, const std::vector<SampleRecord>& bank,
                               const AdapterParams* adapter, InferenceMode mode, const fs::path& dir) {
    const auto split = parse_split(cfg.str("eval.split"));
    const auto protos = prototypes_from_store(in.store, bank, in.index, adapter, mode);
    EvalOutcome o{evaluate_top1(in.store, split, protos, adapter), {}};
    o.metrics = metrics_json(o.result, in.store.class_names());
    write_json(dir / "metrics.json", o.metrics);
    detail::write_text_file(dir / "predictions.csv", predictions_csv(o.result, in.store.class_names()));
    return o;
}

TrainResult train_and_write(const RunConfig& cfg, const TrainConfig& tc, const Inputs& in,
                            const std::vector<SampleRecord>& pool, const fs::path& dir) {
    const auto val = in.store.split(Split::Val);
    auto r = train(in.store, pool, in.index, tc, val);
    save_checkpoint(dir / "checkpoint", r.adapter, r.tau_std, r.selected_epoch, tc);
    detail::write_text_file(dir / "history.csv", history_csv(r.history));
    const std::string name = cfg.str("name").empty() ? "train" : cfg.str("name");
    write_plot(dir, loss_curves_plot({{name, r.history}}));
    return r;
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_synth(const RunConfig& cfg, std::ostream& out) {
    const auto spec = cfg.synthetic_spec();
    const auto dir = cfg.out_dir();
    auto data = make_synthetic(spec);
    save_store(data.store, dir / "store");
    write_captions_jsonl(dir / "captions.jsonl", data.captions);
    write_json(dir / "samples.json",
               sample_manifest_json(cfg.str("domain").empty() ? "synthetic" : cfg.str("domain"), data.store));
    cfg.echo(dir);
    out << "synthetic store: " << data.store.samples().size() << " images, " << data.captions.size()
        << " captions, " << data.store.num_classes() << " classes -> " << (dir / "store").string() << "\n";
}

void cmd_captions_generate(const RunConfig& cfg, std::ostream& out) {
    const auto manifest_path = cfg.require_path("samples");
    const auto pcfg = cfg.provider_config();
    const auto chars = cfg.characteristics();
    const auto m = load_sample_manifest(manifest_path);
    const auto dir = cfg.out_dir();
    const fs::path cache_dir = cfg.path("cache_dir").empty() ? dir / "cache" : cfg.path("cache_dir");

    GenerateOptions opt;
    opt.domain = cfg.str("domain").empty() ? m.domain : cfg.str("domain");
    opt.characteristics = chars;
    opt.provider = pcfg;
    const auto conc = cfg.integer("provider.concurrency");
    if (conc < 1) fail(Errc::ConfigError, "provider.concurrency must be >= 1");
    opt.concurrency = static_cast<std::size_t>(conc);
    opt.prefix = cfg.flag("prefix");
    opt.seed = cfg.seed();
    if (!m.images.empty()) {
        const auto images = m.images;
        opt.images = [images](const SampleRecord& s) {
            auto it = images.find(s.sample_id);
            if (it == images.end()) fail(Errc::IoError, "no image listed for sample '" + s.sample_id + "'");
            return load_image_file(it->second);
        };
    }
    auto provider = make_provider(cfg, pcfg);
    cfg.echo(dir);
    const auto r = generate_captions(m.samples, *provider, cache_dir, opt);
    const auto all = merge_captions_file(dir / "captions.jsonl", r.records);
    const json summary = {{"records", r.records.size()},
                          {"captions_file_records", all.size()},
                          {"provider_calls", r.provider_calls},
                          {"cache_hits", r.cache_hits},
                          {"retries", r.total_retries()}};
    write_json(dir / "generate.json", summary);
    out << "captions: " << r.records.size() << " records, " << r.provider_calls << " provider calls, "
        << r.cache_hits << " cache hits, " << r.total_retries() << " retries -> "
        << (dir / "captions.jsonl").string() << "\n";
}

void cmd_fewshot_sample(const RunConfig& cfg, std::ostream& out) {
    const auto store = load_store(cfg.require_path("store"));
    const auto spec = cfg.few_shot();
    const auto train = store.split(Split::Train);
    if (train.empty()) fail(Errc::EmptySplit, "store has no train samples");
    const auto sel = few_shot_sample(train, spec, store.num_classes());
    json ids = json::array();
    for (const auto& s : sel.samples) ids.push_back(s.sample_id);
    const auto dir = cfg.out_dir();
    write_json(dir / "fewshot.json", {{"k", cfg.raw().at("fewshot.k")},
                                      {"seed", spec.seed},
                                      {"split", "train"},
                                      {"sample_ids", ids},
                                      {"empty_classes", sel.empty_classes}});
    cfg.echo(dir);
    out << "fewshot: " << sel.samples.size() << " samples";
    if (!sel.empty_classes.empty()) out << " (" << sel.empty_classes.size() << " classes without candidates)";
    out << " -> " << (dir / "fewshot.json").string() << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
    const auto tc = cfg.train_config();
    const auto in = load_inputs(cfg, needs_captions(cfg, true, std::nullopt));
    const auto pool = training_pool(cfg, in.store);
    const auto dir = cfg.out_dir();
    cfg.echo(dir);
    const auto r = train_and_write(cfg, tc, in, pool, dir);
    out << "train: " << pool.size() << " samples, " << r.history.size() << " epochs, final loss "
        << format_double(r.history.back().loss.total) << ", checkpoint from epoch " << r.selected_epoch << " -> "
        << (dir / "checkpoint").string() << "\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& out, bool zero_shot) {
    const auto mode = cfg.inference_mode();
    std::optional<Checkpoint> ckpt;
    if (!zero_shot && !cfg.path("checkpoint").empty()) ckpt = load_checkpoint(cfg.require_path("checkpoint"));
    const auto in = load_inputs(cfg, needs_captions(cfg, false, mode));
    const auto bank = mode == InferenceMode::Template ? std::vector<SampleRecord>{} : training_pool(cfg, in.store);
    const auto dir = cfg.out_dir();
    cfg.echo(dir);
    const auto o = evaluate_and_write(cfg, in, bank, ckpt ? &ckpt->adapter : nullptr, mode, dir);
    out << (zero_shot ? "zeroshot" : "eval") << " [" << to_string(mode) << "] " << cfg.str("eval.split") << ": "
        << o.result.correct << "/" << o.result.total << " accuracy " << format_double(o.result.accuracy) << "\n";
}

// Zero-shot classification by asking the MLLM to pick a class name.
void cmd_zeroshot_mllm(const RunConfig& cfg, std::ostream& out) {
    const auto m = load_sample_manifest(cfg.require_path("samples"));
    const auto pcfg = cfg.provider_config();
    const auto split = parse_split(cfg.str("eval.split"));
    auto provider = make_provider(cfg, pcfg);
    if (provider->requires_auth()) {
        const char* key = std::getenv(pcfg.api_key_env.c_str());
        if (!key || !*key) fail(Errc::AuthMissing, pcfg.api_key_env + " is not set");
    }
    RetryPolicy retry;
    retry.seed = cfg.seed();
    const auto dir = cfg.out_dir();
    cfg.echo(dir);

    std::size_t total = 0, correct = 0, rejected = 0;
    std::string csv = "sample_id,true_class,pred_class,answer\n";
    for (const auto& s : m.samples) {
        if (s.split != split) continue;
        auto it = m.images.find(s.sample_id);
        const ImagePayload img = it == m.images.end() ? ImagePayload{} : load_image_file(it->second);
        const auto a = mllm_zero_shot(img, m.class_names, *provider, pcfg, retry);
        ++total;
        if (a.rejected()) ++rejected;
        else if (*a.class_name == s.class_name) ++correct;
        std::string answer = a.raw;
        std::replace(answer.begin(), answer.end(), '\n', ' ');
        std::replace(answer.begin(), answer.end(), '"', '\'');
        csv += s.sample_id + "," + s.class_name + "," + a.class_name.value_or("") + ",\"" + answer + "\"\n";
    }
    if (total == 0) fail(Errc::EmptySplit, "no samples in split '" + cfg.str("eval.split") + "'");
    const double acc = static_cast<double>(correct) / static_cast<double>(total);
    write_json(dir / "metrics.json",
               {{"accuracy", acc}, {"correct", correct}, {"total", total}, {"rejected", rejected}});
    detail::write_text_file(dir / "predictions.csv", csv);
    out << "zeroshot [mllm] " << cfg.str("eval.split") << ": " << correct << "/" << total << " accuracy "
        << format_double(acc) << ", " << rejected << " answers outside the class list\n";
}

void cmd_analyze_captions(const RunConfig& cfg, std::ostream& out) {
    const auto captions_path = cfg.require_path("captions");
    const auto bpe_path = cfg.require_path("bpe");
    std::optional<EmbeddingStore> store;
    if (!cfg.path("store").empty()) store = load_store(cfg.require_path("store"));
    const auto captions = read_captions_jsonl(captions_path);
    if (captions.empty()) fail(Errc::NoCaptions, captions_path.string() + " has no captions");
    const auto tok = BpeTokenizer::from_file(bpe_path);
    const auto dir = cfg.out_dir();
    cfg.echo(dir);

    const auto lengths = token_length_stats(captions, tok);
    std::string len_csv = "sample_id,characteristic,tokens\n";
    for (std::size_t i = 0; i < captions.size(); ++i)
        len_csv += captions[i].sample_id + "," + std::string(to_string(captions[i].characteristic)) + "," +
                   std::to_string(lengths.lengths[i]) + "\n";
    detail::write_text_file(dir / "token_lengths.csv", len_csv);
    std::string over_csv = "sample_id,characteristic,tokens,overflow\n";
    for (const auto& o : lengths.over_limit)
        over_csv += o.sample_id + "," + std::string(to_string(o.characteristic)) + "," + std::to_string(o.length) +
                    "," + std::to_string(o.overflow) + "\n";
    detail::write_text_file(dir / "over_limit.csv", over_csv);

    auto hist_plot = [](std::string slug, std::string title, std::string x, const Histogram& h) {
        Series s{"captions", {}};
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            s.points.emplace_back(0.5 * (h.edges[b] + h.edges[b + 1]), static_cast<double>(h.counts[b]));
        return LinePlot{std::move(slug), std::move(title), std::move(x), "count", {s}};
    };
    json report = {{"captions", captions.size()},
                   {"context_limit", tok.context_limit()},
                   {"token_lengths", to_json(lengths.summary)},
                   {"over_limit", lengths.over_limit.size()}};
    write_plot(dir, hist_plot("token_lengths", "Caption token lengths", "tokens", lengths.summary.histogram));
    if (store) {
        const auto scores = clip_score_stats(*store, captions);
        report["clip_scores"] = to_json(scores.summary);
        write_plot(dir, hist_plot("clip_scores", "Caption-image cosine similarity", "score", scores.summary.histogram));
    }
    write_json(dir / "analysis.json", report);
    out << "analyze: " << captions.size() << " captions, mean " << format_double(lengths.summary.mean)
        << " tokens, " << lengths.over_limit.size() << " over the " << tok.context_limit() << "-token limit\n";
}

std::string w_label(double w) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", w);
    return buf;
}

void cmd_sweep_w(const RunConfig& cfg, std::ostream& out) {
    const auto base = cfg.train_config();
    const auto mode = cfg.inference_mode();
    const auto steps = cfg.integer("sweep.steps");
    if (steps < 1) fail(Errc::ConfigError, "sweep.steps must be >= 1");
    const auto in = load_inputs(cfg, needs_captions(cfg, true, mode));
    const auto pool = training_pool(cfg, in.store);
    const auto dir = cfg.out_dir();
    cfg.echo(dir);

    std::string csv = "w,accuracy,correct,total,selected_epoch,final_loss\n";
    std::vector<std::pair<double, double>> points;
    for (std::int64_t i = 0; i <= steps; ++i) {
        TrainConfig tc = base;
        tc.loss.w = static_cast<double>(i) / static_cast<double>(steps);
        RunConfig run_cfg = cfg;
        run_cfg.set_json("loss.w", tc.loss.w);
        const fs::path run_dir = dir / "runs" / ("w_" + w_label(tc.loss.w));
        run_cfg.set_json("out", run_dir.string());
        run_cfg.echo(run_dir);
        const auto r = train_and_write(run_cfg, tc, in, pool, run_dir);
        const auto o = evaluate_and_write(run_cfg, in, pool, &r.adapter, mode, run_dir);
        csv += format_double(tc.loss.w) + "," + format_double(o.result.accuracy) + "," +
               std::to_string(o.result.correct) + "," + std::to_string(o.result.total) + "," +
               std::to_string(r.selected_epoch) + "," + format_double(r.history.back().loss.total) + "\n";
        points.emplace_back(tc.loss.w, o.result.accuracy);
        out << "sweep w=" << w_label(tc.loss.w) << ": accuracy " << format_double(o.result.accuracy) << "\n";
    }
    detail::write_text_file(dir / "sweep.csv", csv);
    const std::string series = in.store.encoder_id().empty() ? "encoder" : in.store.encoder_id();
    write_plot(dir, w_sweep_plot({{series, points}}));
    out << "sweep: " << points.size() << " runs -> " << (dir / "sweep.csv").string() << "\n";
}

void cmd_report(const RunConfig& cfg, const std::vector<std::string>& run_dirs, std::ostream& out) {
    if (run_dirs.empty()) fail(Errc::ConfigError, "report needs at least one --runs directory");
    for (const auto& d : run_dirs)
        if (!fs::is_directory(d)) fail(Errc::ConfigError, "run directory does not exist: " + d);
    std::vector<RunSummary> runs;
    std::map<std::string, std::vector<std::pair<double, double>>> shots;
    std::set<std::string> names;
    for (const auto& d : run_dirs) {
        const fs::path p(d);
        if (!fs::exists(p / "metrics.json"))
            fail(Errc::IoError, d + " has no metrics.json; run `eval` or `zeroshot` into it first");
        RunSummary r;
        r.metrics = read_json(p / "metrics.json");
        json echo = fs::exists(p / "config-echo.json") ? read_json(p / "config-echo.json") : json::object();
        r.name = echo.value("name", std::string());
        if (r.name.empty()) r.name = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
        if (!names.insert(r.name).second) fail(Errc::ConfigError, "duplicate run name '" + r.name + "'");
        if (fs::exists(p / "history.csv")) r.history = parse_history_csv(read_text(p / "history.csv"));
        const json k = echo.value("fewshot.k", json("full"));
        if (k.is_number_integer() && r.metrics.contains("accuracy")) {
            r.metrics["shots"] = k;
            std::string method = echo.value("method", std::string());
            if (method.empty()) method = "w=" + w_label(echo.value("loss.w", 0.2));
            shots[method].emplace_back(k.get<double>(), r.metrics.at("accuracy").get<double>());
        }
        runs.push_back(std::move(r));
    }
    std::vector<LinePlot> extra;
    if (!shots.empty()) extra.push_back(accuracy_vs_shots_plot(shots));
    const auto dir = cfg.out_dir();
    const auto files = emit_report(dir, runs, extra);
    out << "report: " << runs.size() << " runs, " << files.written.size() << " files -> " << dir.string() << "\n";
}

void cmd_keys(std::ostream& out) {
    for (const auto& k : config_keys()) out << k.key << " = " << k.default_value.dump() << "  # " << k.help << "\n";
}

// ---------------------------------------------------------------------------
// Argument handling

struct Leaf {
    CLI::App* app = nullptr;
    std::string config;
    std::vector<std::string> sets;
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option*>> bound;
    bool no_prefix = false;
    std::vector<std::string> runs;

    explicit Leaf(CLI::App* a) : app(a) {
        app->add_option("--config", config, "flat JSON config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override a config key (key=value), repeatable");
        bind("--out", "out", "run directory");
        bind("--seed", "seed", "root seed");
    }

    void bind(const std::string& flag, const std::string& key, const std::string& help) {
        bound.emplace_back(key, app->add_option(flag, values[key], help));
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config.empty()) cfg.merge_file(config);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) fail(Errc::ConfigError, "--set expects key=value, got '" + s + "'");
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        for (const auto& [key, opt] : bound)
            if (opt->count() > 0) cfg.set(key, values.at(key));
        if (no_prefix) cfg.set_json("prefix", false);
        cfg.seed();
        return cfg;
    }
};

int exit_code_for(Errc c) {
    switch (c) {
    case Errc::ConfigError:
    case Errc::InvalidArgument:
    case Errc::EmptySlot:
        return kExitConfig;
    case Errc::ProviderError:
    case Errc::AuthMissing:
        return kExitProvider;
    case Errc::ShapeMismatch:
        return kExitInternal;
    default:
        return kExitData;
    }
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"capfuse: caption-augmented contrastive fine-tuning of CLIP adapters", "capfuse"};
    app.require_subcommand(1);
    std::deque<Leaf> leaves;
    auto leaf = [&](CLI::App* a) -> Leaf& { return leaves.emplace_back(a); };

    auto& synth = leaf(app.add_subcommand("synth", "write a synthetic store, captions and sample manifest"));

    auto* captions = app.add_subcommand("captions", "caption generation");
    captions->require_subcommand(1);
    auto& gen = leaf(captions->add_subcommand("generate", "generate captions for a sample manifest"));
    gen.bind("--samples", "samples", "sample manifest JSON");
    gen.bind("--domain", "domain", "prompt domain");
    gen.bind("--provider", "provider", "mock | http");
    gen.bind("--endpoint", "provider.endpoint", "provider URL");
    gen.bind("--model", "provider.model", "model id");
    gen.bind("--cache-dir", "cache_dir", "caption cache directory");
    gen.app->add_flag("--no-prefix", gen.no_prefix, "do not prepend the class prefix");

    auto* fewshot = app.add_subcommand("fewshot", "few-shot selection");
    fewshot->require_subcommand(1);
    auto& fs_sample = leaf(fewshot->add_subcommand("sample", "write a few-shot selection file"));
    fs_sample.bind("--store", "store", "embedding store");
    fs_sample.bind("--k", "fewshot.k", "shots per class or full");

    auto add_data_flags = [](Leaf& l) {
        l.bind("--store", "store", "embedding store");
        l.bind("--captions", "captions", "captions.jsonl");
        l.bind("--k", "fewshot.k", "shots per class or full");
        l.bind("--selection", "fewshot.selection", "few-shot selection file");
    };

    auto& train = leaf(app.add_subcommand("train", "train the adapters"));
    add_data_flags(train);
    train.bind("--w", "loss.w", "supervised-loss weight");
    train.bind("--epochs", "train.epochs", "epochs");
    train.bind("--lr", "train.lr", "learning rate");

    auto& eval = leaf(app.add_subcommand("eval", "evaluate a checkpoint on a split"));
    add_data_flags(eval);
    eval.bind("--checkpoint", "checkpoint", "checkpoint directory (identity adapters when omitted)");
    eval.bind("--mode", "infer.mode", "embedding_avg | logit_avg | nearest | template");
    eval.bind("--split", "eval.split", "train | val | test");

    auto& zeroshot = leaf(app.add_subcommand("zeroshot", "inference with identity adapters"));
    add_data_flags(zeroshot);
    zeroshot.bind("--mode", "infer.mode", "embedding_avg | logit_avg | nearest | template | mllm");
    zeroshot.bind("--split", "eval.split", "train | val | test");
    zeroshot.bind("--samples", "samples", "sample manifest with images (mllm mode)");
    zeroshot.bind("--provider", "provider", "mock | http (mllm mode)");

    auto* analyze = app.add_subcommand("analyze", "caption analysis");
    analyze->require_subcommand(1);
    auto& an_caps = leaf(analyze->add_subcommand("captions", "token-length and CLIP-score statistics"));
    an_caps.bind("--captions", "captions", "captions.jsonl");
    an_caps.bind("--bpe", "bpe", "BPE merges file");
    an_caps.bind("--store", "store", "embedding store for CLIP scores");

    auto* sweep = app.add_subcommand("sweep", "parameter sweeps");
    sweep->require_subcommand(1);
    auto& sweep_w = leaf(sweep->add_subcommand("w", "train and evaluate over a grid of w"));
    add_data_flags(sweep_w);
    sweep_w.bind("--mode", "infer.mode", "inference mode for evaluation");
    sweep_w.bind("--steps", "sweep.steps", "grid resolution");

    auto& report = leaf(app.add_subcommand("report", "aggregate run directories"));
    report.app->add_option("--runs", report.runs, "run directories")->required();

    auto* keys = app.add_subcommand("keys", "list config keys with defaults");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "capfuse: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (*keys) {
            cmd_keys(out);
            return kExitOk;
        }
        for (auto& l : leaves) {
            if (!l.app->parsed()) continue;
            const auto cfg = l.resolve();
            if (&l == &synth) cmd_synth(cfg, out);
            else if (&l == &gen) cmd_captions_generate(cfg, out);
            else if (&l == &fs_sample) cmd_fewshot_sample(cfg, out);
            else if (&l == &train) cmd_train(cfg, out);
            else if (&l == &eval) cmd_eval(cfg, out, false);
            else if (&l == &zeroshot) {
                if (cfg.str("infer.mode") == "mllm") cmd_zeroshot_mllm(cfg, out);
                else cmd_eval(cfg, out, true);
            } else if (&l == &an_caps) cmd_analyze_captions(cfg, out);
            else if (&l == &sweep_w) cmd_sweep_w(cfg, out);
            else if (&l == &report) cmd_report(cfg, l.runs, out);
            return kExitOk;
        }
        err << "capfuse: no command given\n";
        return kExitConfig;
    } catch (const Error& e) {
        err << "capfuse: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const json::exception& e) {
        err << "capfuse: malformed JSON input: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "capfuse: IoError: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "capfuse: internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

} // namespace capfuse::cli
