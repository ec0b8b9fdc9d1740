// chbr: command line front end for sampling concept banks, classifying
// images and evaluating accuracy.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "chbr/core.hpp"
#include "chbr/embedding.hpp"
#include "chbr/error.hpp"
#include "chbr/eval.hpp"
#include "chbr/image.hpp"
#include "chbr/inference.hpp"
#include "chbr/likelihood.hpp"
#include "chbr/llm.hpp"
#include "chbr/sampler.hpp"
#include "chbr/util.hpp"

using nlohmann::json;
using namespace chbr;

namespace {

// ---- config files ---------------------------------------------------------
//
// A config file is a JSON object whose keys are the long flag names with
// dashes written as underscores. Nested objects flatten with '_', so
// {"llm": {"base_url": ...}} feeds --llm-base-url. Flags on the command line
// win over the file.

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
    for (const auto& [k, v] : j.items()) {
        const auto key = prefix.empty() ? k : prefix + "_" + k;
        if (v.is_object())
            flatten(v, key, out);
        else
            out[key] = v;
    }
}

std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
}

void apply_config(CLI::App& cmd, const std::string& path) {
    if (path.empty()) return;
    const json j = read_json_file(path);
    if (!j.is_object()) throw Error(ErrorKind::parse, "config file '" + path + "' must hold a JSON object");
    std::map<std::string, json> flat;
    flatten(j, "", flat);
    std::map<std::string, CLI::Option*> by_key;
    for (auto* opt : cmd.get_options()) {
        if (opt->get_lnames().empty()) continue;
        auto key = opt->get_lnames().front();
        std::replace(key.begin(), key.end(), '-', '_');
        by_key[key] = opt;
    }
    for (const auto& [key, value] : flat) {
        auto it = by_key.find(key);
        if (it == by_key.end() || key == "config" || key == "help")
            throw Error(ErrorKind::precondition, "unknown key '" + key + "' in config file '" + path + "'");
        CLI::Option* opt = it->second;
        if (opt->count() > 0) continue;
        std::vector<std::string> results;
        if (value.is_array())
            for (const auto& e : value) results.push_back(scalar_text(e));
        else
            results.push_back(scalar_text(value));
        opt->add_result(results);
        opt->run_callback();
    }
}

// ---- output helpers -------------------------------------------------------

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-")
        std::cout << text << std::flush;
    else
        write_text_file(path, text);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::precondition, "cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<json> read_jsonl(const std::string& path) {
    std::vector<json> rows;
    std::istringstream in(read_text(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw Error(ErrorKind::parse, path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return rows;
}

// ---- shared option groups -------------------------------------------------

struct LikelihoodFlags {
    std::string kind = "average";
    double tau = 3.0;
    std::string normalization = "within_class";
    std::size_t views = 64;
    double keep = 10.0;
    std::size_t steps = 30;
    double lr = 1.0;
    double logit_scale = 100.0;
    bool logit_scale_scores = false;

    void add(CLI::App& cmd) {
        cmd.add_option("--likelihood", kind, "average | confidence | tta")
            ->check(CLI::IsMember({"average", "confidence", "tta"}));
        cmd.add_option("--tau", tau, "confidence temperature");
        cmd.add_option("--confidence-normalization", normalization, "within_class | across_classes")
            ->check(CLI::IsMember({"within_class", "across_classes"}));
        cmd.add_option("--views", views, "TTA views per image (view 0 unaugmented)");
        cmd.add_option("--keep", keep, "percent of lowest-entropy views kept");
        cmd.add_option("--steps", steps, "TTA optimizer steps");
        cmd.add_option("--lr", lr, "TTA learning rate");
        cmd.add_option("--logit-scale", logit_scale, "softmax scale inside the TTA entropy");
        cmd.add_flag("--logit-scale-scores", logit_scale_scores,
                     "multiply similarities by the logit scale before scoring");
    }

    LikelihoodSpec spec() const {
        LikelihoodSpec s;
        s.kind = likelihood_kind_from_string(kind);
        s.tau = tau;
        s.normalization = normalization == "across_classes" ? ConfidenceNormalization::across_classes
                                                            : ConfidenceNormalization::within_class;
        s.tta.num_views = views;
        s.tta.keep_percent = keep;
        s.tta.steps = steps;
        s.tta.learning_rate = lr;
        s.tta.logit_scale = logit_scale;
        validate(s);
        return s;
    }
};

struct TemplateFlags {
    PromptTemplate tmpl;
    void add(CLI::App& cmd) {
        cmd.add_option("--template-base", tmpl.base_pattern, "prompt without a concept");
        cmd.add_option("--template-concept", tmpl.concept_pattern, "prompt with a concept");
    }
};

struct EmbedFlags {
    std::string images;
    std::string texts;
    std::string embed_url;
    std::string image_dir;
    double embed_timeout = 60.0;
    std::size_t embed_max_in_flight = 4;
    std::size_t embed_batch_size = 64;

    void add(CLI::App& cmd) {
        cmd.add_option("--images", images, "image embedding store");
        cmd.add_option("--texts", texts, "prompt embedding store");
        cmd.add_option("--embed-url", embed_url, "remote embedding service (replaces the stores)");
        cmd.add_option("--image-dir", image_dir, "directory of <image_id>.ppm files for remote mode");
        cmd.add_option("--embed-timeout", embed_timeout, "seconds per embedding request");
        cmd.add_option("--embed-max-in-flight", embed_max_in_flight, "concurrent embedding requests");
        cmd.add_option("--embed-batch-size", embed_batch_size, "payloads per embedding request");
    }
};

// Owns whatever backs the providers for one command.
struct ProviderSet {
    std::optional<EmbeddingStore> image_store;
    std::optional<EmbeddingStore> text_store;
    std::unique_ptr<RemoteEmbedder> remote;
    std::unique_ptr<ImageEmbeddingProvider> images;
    std::unique_ptr<TextEmbeddingProvider> texts;
    std::unique_ptr<PromptEmbeddingCache> cache;
    std::unique_ptr<Providers> providers;
};

std::unique_ptr<ProviderSet> make_providers(const EmbedFlags& f, const std::string& manifest_images = {},
                                            const std::string& manifest_texts = {},
                                            const std::string& manifest_image_dir = {}) {
    auto p = std::make_unique<ProviderSet>();
    if (!f.embed_url.empty()) {
        RemoteEmbedConfig rc;
        rc.base_url = f.embed_url;
        rc.timeout_seconds = f.embed_timeout;
        rc.max_in_flight = f.embed_max_in_flight;
        rc.batch_size = f.embed_batch_size;
        p->remote = std::make_unique<RemoteEmbedder>(rc);
        const auto dir = f.image_dir.empty() ? manifest_image_dir : f.image_dir;
        require(!dir.empty(), "remote mode needs --image-dir");
        p->images = std::make_unique<RemoteImageProvider>(*p->remote, dir, nullptr);
        p->texts = std::make_unique<RemoteTextProvider>(*p->remote);
    } else {
        const auto img = f.images.empty() ? manifest_images : f.images;
        const auto txt = f.texts.empty() ? manifest_texts : f.texts;
        require(!img.empty(), "an image store (--images) or --embed-url is required");
        require(!txt.empty(), "a prompt store (--texts) or --embed-url is required");
        p->image_store.emplace(load_store(img));
        p->text_store.emplace(load_store(txt));
        p->images = std::make_unique<StoreImageProvider>(*p->image_store);
        p->texts = std::make_unique<StoreTextProvider>(*p->text_store);
    }
    p->cache = std::make_unique<PromptEmbeddingCache>(*p->texts);
    p->providers = std::make_unique<Providers>(Providers{*p->images, *p->cache});
    return p;
}

// Base image ids of a store in store order: "x#view3" contributes "x".
std::vector<std::string> store_image_ids(const EmbeddingStore& store) {
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& id : store.ids()) {
        const auto pos = id.rfind("#view");
        const auto base = pos == std::string::npos ? id : id.substr(0, pos);
        if (seen.insert(base).second) ids.push_back(base);
    }
    return ids;
}

// ---- commands -------------------------------------------------------------

struct SampleCmd {
    std::string config, classes, out, text_store, mock_llm, checkpoint, task_name, diagnostics;
    std::string mode = "standard";
    SamplerConfig sc;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("sample", "sample a weighted concept bank from an LLM");
        cmd->add_option("--config", config, "sampler config (JSON)");
        cmd->add_option("--classes", classes, "class list (JSON)");
        cmd->add_option("--out", out, "concept bank output (default stdout)");
        cmd->add_option("--mode", mode, "standard | efficient")->check(CLI::IsMember({"standard", "efficient"}));
        cmd->add_option("--text-store", text_store, "class-name embeddings for efficient mode");
        cmd->add_option("--window-size", sc.window_size, "distractor classes per test (H)");
        cmd->add_option("--samples-per-class", sc.samples_per_class, "concepts sampled per class (M)");
        cmd->add_option("--verifications", sc.verifications, "discriminative trials per concept (Z)");
        cmd->add_option("--seed", sc.seed, "run seed");
        cmd->add_option("--efficient-batch", sc.efficient_batch, "concepts per generation call in efficient mode");
        cmd->add_option("--llm-base-url", sc.llm.base_url, "chat completions endpoint base URL");
        cmd->add_option("--llm-model-name", sc.llm.model_name, "model name sent to the endpoint");
        cmd->add_option("--llm-request-timeout", sc.llm.request_timeout, "seconds per request");
        cmd->add_option("--llm-max-in-flight", sc.llm.max_in_flight, "concurrent LLM requests");
        cmd->add_option("--llm-max-retries", sc.llm.max_retries, "retries on transient failures");
        cmd->add_option("--llm-decode-temperature", sc.llm.decode_temperature, "generation temperature");
        cmd->add_option("--llm-verify-temperature", sc.llm.verify_temperature, "discriminative test temperature");
        cmd->add_option("--llm-backoff-base-ms", sc.llm.backoff_base_ms, "first retry delay");
        cmd->add_option("--llm-backoff-max-ms", sc.llm.backoff_max_ms, "retry delay cap");
        cmd->add_option("--mock-llm", mock_llm, "scripted replies (JSON) instead of an endpoint");
        cmd->add_option("--checkpoint", checkpoint, "JSONL checkpoint for resuming");
        cmd->add_option("--task-name", task_name, "task name stored in the bank");
        cmd->add_option("--diagnostics", diagnostics, "write query counts here (JSON)");
        cmd->callback([this, cmd] {
            apply_config(*cmd, config);
            run();
        });
    }

    void run() {
        require(!classes.empty(), "--classes is required");
        const auto labels = load_class_labels(classes);
        sc.mode = mode == "efficient" ? SamplerMode::efficient : SamplerMode::standard;
        std::unique_ptr<ChatClient> client;
        if (!mock_llm.empty())
            client = std::make_unique<ScriptedChatClient>(read_json_file(mock_llm));
        else
            client = std::make_unique<HttpChatClient>(sc.llm);
        SampleOptions so;
        if (!checkpoint.empty()) so.checkpoint_path = checkpoint;
        so.task_name = task_name.empty() ? std::filesystem::path(classes).stem().string() : task_name;
        SamplerDiagnostics diag;
        ConceptBank bank;
        if (sc.mode == SamplerMode::efficient) {
            require(!text_store.empty(), "efficient mode needs --text-store");
            const auto store = load_store(text_store);
            bank = efficient_sample_concept_bank(labels, store, sc, *client, so, &diag);
        } else {
            bank = sample_concept_bank(labels, sc, *client, so, &diag);
        }
        emit(out, dump_concept_bank(bank));
        const json d = {{"generation_queries", diag.generation_queries},
                        {"verification_queries", diag.verification_queries},
                        {"total_queries", diag.total_queries()},
                        {"retries", diag.retries},
                        {"reasks", diag.reasks},
                        {"resumed_cells", diag.resumed_cells}};
        if (!diagnostics.empty()) write_text_file(diagnostics, d.dump(2) + "\n");
        std::cerr << "sampled " << labels.size() << " classes: " << d.dump() << "\n";
    }
};

struct InferCmd {
    std::string config, bank, manifest, out, trace;
    std::vector<std::string> image_ids;
    std::uint64_t seed = 0;
    std::size_t top_k = 3, workers = 1;
    bool with_diagnostics = false;
    LikelihoodFlags lf;
    TemplateFlags tf;
    EmbedFlags ef;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("infer", "classify images with a concept bank");
        cmd->add_option("--config", config, "config file (JSON)");
        cmd->add_option("--bank", bank, "concept bank (JSON)");
        cmd->add_option("--manifest", manifest, "take image ids and stores from a manifest");
        cmd->add_option("--image-id", image_ids, "image ids to classify (default: every image in the store)");
        cmd->add_option("--out", out, "predictions JSONL (default stdout)");
        cmd->add_option("--trace", trace, "per-image diagnostics JSONL");
        cmd->add_option("--seed", seed, "augmentation seed");
        cmd->add_option("--top-k", top_k, "contributions kept per class");
        cmd->add_option("--workers", workers, "images classified concurrently");
        cmd->add_flag("--diagnostics", with_diagnostics, "embed diagnostics in each prediction");
        lf.add(*cmd);
        tf.add(*cmd);
        ef.add(*cmd);
        cmd->callback([this, cmd] {
            apply_config(*cmd, config);
            run();
        });
    }

    void run() {
        require(!bank.empty(), "--bank is required");
        const auto cb = load_concept_bank(bank);
        const auto spec = lf.spec();
        std::optional<DatasetManifest> m;
        if (!manifest.empty()) m = load_manifest(manifest);
        auto ps = make_providers(ef, m ? m->image_store : "", m ? m->text_store : "", m ? m->image_dir : "");
        std::vector<std::string> ids = image_ids;
        if (ids.empty() && m)
            for (const auto& it : m->items) ids.push_back(it.image_id);
        if (ids.empty()) {
            require(ps->image_store.has_value(), "remote mode needs --image-id or --manifest");
            ids = store_image_ids(*ps->image_store);
        }
        require(!ids.empty(), "no images to classify");

        PredictOptions po;
        po.seed = seed;
        po.top_k = top_k;
        po.prompt_template = tf.tmpl;
        if (lf.logit_scale_scores) po.similarity_scale = spec.tta.logit_scale;
        std::vector<PredictionResult> results(ids.size());
        parallel_for(ids.size(), workers,
                     [&](std::size_t k) { results[k] = predict(ids[k], cb, spec, *ps->providers, po); });
        std::string preds, traces;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            preds += prediction_to_json(ids[k], results[k], with_diagnostics, spec.kind).dump() + "\n";
            traces += trace_record(ids[k], results[k], spec.kind).dump() + "\n";
        }
        emit(out, preds);
        if (!trace.empty()) write_text_file(trace, traces);
    }
};

struct EvalCmd {
    std::string config, manifest, bank, out, predictions, in;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::size_t workers = 1;
    LikelihoodFlags lf;
    TemplateFlags tf;
    EmbedFlags ef;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("eval", "top-1 accuracy over a manifest with seed replication");
        cmd->add_option("--config", config, "config file (JSON)");
        cmd->add_option("--manifest", manifest, "dataset manifest (JSON, or CSV with --classes in the bank)");
        cmd->add_option("--bank", bank, "concept bank (JSON)");
        cmd->add_option("--seeds", seeds, "comma-separated seeds")->delimiter(',');
        cmd->add_option("--out", out, "report JSON (default stdout)");
        cmd->add_option("--predictions", predictions, "score an existing predictions JSONL instead of predicting");
        cmd->add_option("--in", in, "re-read a report and print it");
        cmd->add_option("--workers", workers, "images classified concurrently");
        lf.add(*cmd);
        tf.add(*cmd);
        ef.add(*cmd);
        cmd->callback([this, cmd] {
            apply_config(*cmd, config);
            run();
        });
    }

    DatasetManifest load(const std::optional<ConceptBank>& cb) const {
        if (std::filesystem::path(manifest).extension() == ".csv") {
            require(cb.has_value(), "a CSV manifest takes its classes from --bank");
            DatasetManifest m;
            m.name = std::filesystem::path(manifest).stem().string();
            m.classes = cb->classes;
            m.items = manifest_items_from_csv(read_text(manifest));
            validate(m);
            return m;
        }
        return load_manifest(manifest);
    }

    void run() {
        if (!in.empty()) {
            emit(out, to_json(eval_report_from_json(read_json_file(in))).dump(2) + "\n");
            return;
        }
        require(!manifest.empty(), "--manifest is required");
        std::optional<ConceptBank> cb;
        if (!bank.empty()) cb = load_concept_bank(bank);
        const auto m = load(cb);
        require(!m.items.empty(), "manifest '" + manifest + "' has no items");
        EvalReport report;
        if (!predictions.empty()) {
            std::map<std::string, std::string> by_id;
            for (const auto& row : read_jsonl(predictions)) {
                try {
                    by_id[row.at("image_id").get<std::string>()] = row.at("predicted").get<std::string>();
                } catch (const json::exception& e) {
                    throw Error(ErrorKind::parse, "malformed prediction row: " + std::string(e.what()));
                }
            }
            std::vector<std::string> preds;
            for (const auto& it : m.items) {
                auto p = by_id.find(it.image_id);
                if (p == by_id.end())
                    throw Error(ErrorKind::lookup, "no prediction for image '" + it.image_id + "'");
                preds.push_back(p->second);
            }
            report = summarize(m, {seeds.front()}, {preds}, {{"predictions", predictions}});
        } else {
            require(cb.has_value(), "--bank is required");
            auto ps = make_providers(ef, m.image_store, m.text_store, m.image_dir);
            const auto spec = lf.spec();
            EvalOptions eo;
            eo.seeds = seeds;
            eo.workers = workers;
            eo.predict.prompt_template = tf.tmpl;
            if (lf.logit_scale_scores) eo.predict.similarity_scale = spec.tta.logit_scale;
            report = run_eval(m, *cb, spec, *ps->providers, eo);
        }
        emit(out, to_json(report).dump(2) + "\n");
    }
};

struct ConceptsCmd {
    std::string config, bank, class_id, text_store, embed_url, out, in;
    std::size_t k = 5;
    std::uint64_t seed = 0;
    std::size_t max_iterations = 100;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("concepts", "representative concepts of a class by clustering");
        cmd->add_option("--config", config, "config file (JSON)");
        cmd->add_option("--bank", bank, "concept bank (JSON)");
        cmd->add_option("--class", class_id, "class id");
        cmd->add_option("--k", k, "number of clusters");
        cmd->add_option("--text-store", text_store, "concept text embeddings keyed by content id");
        cmd->add_option("--embed-url", embed_url, "remote embedding service instead of a store");
        cmd->add_option("--seed", seed, "clustering seed");
        cmd->add_option("--max-iterations", max_iterations, "k-means iteration cap");
        cmd->add_option("--out", out, "table JSON (default stdout)");
        cmd->add_option("--in", in, "re-read a table and print it");
        cmd->callback([this, cmd] {
            apply_config(*cmd, config);
            run();
        });
    }

    void run() {
        if (!in.empty()) {
            const auto j = read_json_file(in);
            json doc = j.is_object() ? j : json{{"concepts", j}};
            doc["concepts"] = to_json(representative_concepts_from_json(j));
            emit(out, doc.dump(2) + "\n");
            return;
        }
        require(!bank.empty() && !class_id.empty(), "--bank and --class are required");
        const auto cb = load_concept_bank(bank);
        std::optional<EmbeddingStore> store;
        std::unique_ptr<RemoteEmbedder> remote;
        std::unique_ptr<TextEmbeddingProvider> provider;
        if (!embed_url.empty()) {
            RemoteEmbedConfig rc;
            rc.base_url = embed_url;
            remote = std::make_unique<RemoteEmbedder>(rc);
            provider = std::make_unique<RemoteTextProvider>(*remote);
        } else {
            require(!text_store.empty(), "--text-store or --embed-url is required");
            store.emplace(load_store(text_store));
            provider = std::make_unique<StoreTextProvider>(*store);
        }
        const auto rows = representative_concepts(cb, class_id, *provider, k, {seed, max_iterations});
        const json doc = {{"class", class_id}, {"k", k}, {"seed", seed}, {"concepts", to_json(rows)}};
        emit(out, doc.dump(2) + "\n");
    }
};

struct PromptsCmd {
    std::string config, bank, classes, out;
    TemplateFlags tf;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("prompts", "list rendered prompts with their store ids");
        cmd->add_option("--config", config, "config file (JSON)");
        cmd->add_option("--bank", bank, "concept bank (JSON)");
        cmd->add_option("--classes", classes, "class list: base prompts only");
        cmd->add_option("--out", out, "JSONL of {id, prompt} (default stdout)");
        tf.add(*cmd);
        cmd->callback([this, cmd] {
            apply_config(*cmd, config);
            run();
        });
    }

    void run() {
        std::vector<std::string> prompts;
        if (!bank.empty()) {
            const auto cb = load_concept_bank(bank);
            for (std::size_t i = 0; i < cb.classes.size(); ++i)
                for (const auto& wc : cb.concepts[i]) prompts.push_back(render_prompt(tf.tmpl, cb.classes[i], wc.item));
        } else {
            require(!classes.empty(), "--bank or --classes is required");
            for (const auto& c : load_class_labels(classes)) prompts.push_back(render_prompt(tf.tmpl, c));
        }
        std::set<std::string> seen;
        std::string text;
        for (const auto& p : prompts)
            if (seen.insert(p).second) text += json{{"id", content_id(p)}, {"prompt", p}}.dump() + "\n";
        emit(out, text);
    }
};

struct AugmentCmd {
    std::string image, out_dir;
    std::size_t views = 64, resolution = 224;
    std::uint64_t seed = 0;

    void add(CLI::App& app) {
        auto* cmd = app.add_subcommand("augment", "write random resized crops of an image as PPM files");
        cmd->add_option("--image", image, "netpbm image")->required();
        cmd->add_option("--views", views, "number of views");
        cmd->add_option("--seed", seed, "augmentation seed");
        cmd->add_option("--resolution", resolution, "output side length");
        cmd->add_option("--out-dir", out_dir, "output directory")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        RandomResizedCropParams params;
        params.resolution = resolution;
        const auto views_out = RandomResizedCropAugmenter(params).augment(load_image(image), views, seed);
        std::filesystem::create_directories(out_dir);
        const auto stem = std::filesystem::path(image).stem().string();
        for (std::size_t n = 0; n < views_out.size(); ++n)
            save_image(views_out[n], (std::filesystem::path(out_dir) / (view_id(stem, n) + ".ppm")).string());
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-guided Bayesian zero-shot classification"};
    app.require_subcommand(1);
    SampleCmd sample;
    InferCmd infer;
    EvalCmd eval;
    ConceptsCmd concepts;
    PromptsCmd prompts;
    AugmentCmd augment;
    sample.add(app);
    infer.add(app);
    eval.add(app);
    concepts.add(app);
    prompts.add(app);
    augment.add(app);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const Error& e) {
        std::cerr << "chbr: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "chbr: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "chbr: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
