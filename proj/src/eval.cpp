#include "chbr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include "chbr/error.hpp"
#include "chbr/util.hpp"

namespace chbr {

using nlohmann::json;

void validate(const DatasetManifest& manifest) {
    validate_class_set(manifest.classes);
    std::set<std::string> class_ids, seen;
    for (const auto& c : manifest.classes) class_ids.insert(c.id);
    for (const auto& item : manifest.items) {
        require(!item.image_id.empty(), "manifest item with an empty image_id");
        require(seen.insert(item.image_id).second, "duplicate image_id '" + item.image_id + "' in manifest");
        require(class_ids.count(item.true_class_id) == 1,
                "image '" + item.image_id + "' has unknown class '" + item.true_class_id + "'");
    }
}

json to_json(const DatasetManifest& manifest) {
    json items = json::array();
    for (const auto& it : manifest.items) items.push_back({{"image_id", it.image_id}, {"true_class_id", it.true_class_id}});
    json j = {{"name", manifest.name}, {"classes", to_json(manifest.classes)}, {"items", items}};
    if (!manifest.image_store.empty()) j["image_store"] = manifest.image_store;
    if (!manifest.text_store.empty()) j["text_store"] = manifest.text_store;
    if (!manifest.image_dir.empty()) j["image_dir"] = manifest.image_dir;
    return j;
}

namespace {

std::string resolve(const std::string& base_dir, const std::string& p) {
    if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

}  // namespace

DatasetManifest manifest_from_json(const json& j, const std::string& base_dir) {
    DatasetManifest m;
    try {
        m.name = j.value("name", std::string{});
        m.classes = class_labels_from_json(j.at("classes"));
        for (const auto& e : j.at("items"))
            m.items.push_back({e.at("image_id").get<std::string>(), e.at("true_class_id").get<std::string>()});
        m.image_store = resolve(base_dir, j.value("image_store", std::string{}));
        m.text_store = resolve(base_dir, j.value("text_store", std::string{}));
        m.image_dir = resolve(base_dir, j.value("image_dir", std::string{}));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed manifest: ") + e.what());
    }
    validate(m);
    return m;
}

DatasetManifest load_manifest(const std::string& path) {
    return manifest_from_json(read_json_file(path), std::filesystem::path(path).parent_path().string());
}

std::vector<ManifestItem> manifest_items_from_csv(const std::string& text) {
    std::vector<ManifestItem> items;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto row = trim(line);
        if (row.empty()) continue;
        const auto comma = row.find(',');
        if (comma == std::string::npos || row.find(',', comma + 1) != std::string::npos)
            throw Error(ErrorKind::parse, "manifest CSV line " + std::to_string(lineno) + " needs exactly two fields");
        ManifestItem item{trim(row.substr(0, comma)), trim(row.substr(comma + 1))};
        if (items.empty() && item.image_id == "image_id" && item.true_class_id == "true_class_id") continue;
        items.push_back(std::move(item));
    }
    return items;
}

double top1_accuracy(const std::vector<std::string>& predicted_ids, const std::vector<std::string>& true_ids) {
    require(predicted_ids.size() == true_ids.size(),
            "top1_accuracy: " + std::to_string(predicted_ids.size()) + " predictions for " +
                std::to_string(true_ids.size()) + " labels",
            ErrorKind::shape);
    require(!true_ids.empty(), "top1_accuracy needs at least one item");
    std::size_t hits = 0;
    for (std::size_t k = 0; k < true_ids.size(); ++k) hits += predicted_ids[k] == true_ids[k];
    return static_cast<double>(hits) / static_cast<double>(true_ids.size());
}

double top1_accuracy(const std::vector<ClassLabel>& predictions, const std::vector<ClassLabel>& truths) {
    std::vector<std::string> p, t;
    for (const auto& c : predictions) p.push_back(c.id);
    for (const auto& c : truths) t.push_back(c.id);
    return top1_accuracy(p, t);
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
    require(!values.empty(), "mean of an empty list");
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

EvalReport summarize(const DatasetManifest& manifest, const std::vector<std::uint64_t>& seeds,
                     std::vector<std::vector<std::string>> predictions, json config) {
    require(!manifest.items.empty(), "manifest has no items");
    require(!seeds.empty(), "at least one seed is required");
    require(predictions.size() == seeds.size(), "one prediction list per seed is required", ErrorKind::shape);
    EvalReport r;
    r.manifest_name = manifest.name;
    r.seeds = seeds;
    r.num_items = manifest.items.size();
    r.config = std::move(config);

    std::vector<std::string> truths;
    for (const auto& it : manifest.items) truths.push_back(it.true_class_id);
    for (const auto& p : predictions) r.per_seed_accuracy.push_back(top1_accuracy(p, truths));
    std::tie(r.mean_accuracy, r.std_accuracy) = mean_and_std(r.per_seed_accuracy);

    for (const auto& c : manifest.classes) {
        std::size_t total = 0, hits = 0;
        for (const auto& p : predictions)
            for (std::size_t k = 0; k < truths.size(); ++k)
                if (truths[k] == c.id) {
                    ++total;
                    hits += p[k] == c.id;
                }
        if (total > 0) r.per_class_accuracy.emplace_back(c.id, static_cast<double>(hits) / static_cast<double>(total));
    }
    r.predictions = std::move(predictions);
    return r;
}

EvalReport run_eval(const DatasetManifest& manifest, const ConceptBank& bank, const LikelihoodSpec& spec,
                    Providers& providers, const EvalOptions& options) {
    require(!manifest.items.empty(), "manifest has no items");
    require(!options.seeds.empty(), "at least one seed is required");
    validate(manifest);
    validate(bank);
    validate(spec);
    for (const auto& c : manifest.classes)
        require(bank.find_class(c.id).has_value(), "manifest class '" + c.id + "' is missing from the concept bank");

    std::vector<std::vector<std::string>> predictions;
    for (auto seed : options.seeds) {
        std::vector<std::string> preds(manifest.items.size());
        parallel_for(manifest.items.size(), options.workers, [&](std::size_t k) {
            PredictOptions po = options.predict;
            po.seed = seed;
            preds[k] = predict(manifest.items[k].image_id, bank, spec, providers, po).predicted.id;
        });
        predictions.push_back(std::move(preds));
    }
    json config = {{"likelihood", to_json(spec)},
                   {"seeds", options.seeds},
                   {"similarity_scale", options.predict.similarity_scale},
                   {"prompt_template",
                    {{"base", options.predict.prompt_template.base_pattern},
                     {"concept", options.predict.prompt_template.concept_pattern}}},
                   {"bank_task", bank.task_name}};
    return summarize(manifest, options.seeds, std::move(predictions), std::move(config));
}

json to_json(const EvalReport& report) {
    json per_class = json::object();
    for (const auto& [id, acc] : report.per_class_accuracy) per_class[id] = acc;
    return {{"manifest", report.manifest_name},
            {"seeds", report.seeds},
            {"per_seed_accuracy", report.per_seed_accuracy},
            {"top1_accuracy", report.mean_accuracy},
            {"mean_accuracy", report.mean_accuracy},
            {"std_accuracy", report.std_accuracy},
            {"per_class_accuracy", per_class},
            {"class_order", [&] {
                 json a = json::array();
                 for (const auto& pc : report.per_class_accuracy) a.push_back(pc.first);
                 return a;
             }()},
            {"num_items", report.num_items},
            {"config", report.config},
            {"predictions", report.predictions}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    try {
        r.manifest_name = j.at("manifest").get<std::string>();
        r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        r.per_seed_accuracy = j.at("per_seed_accuracy").get<std::vector<double>>();
        r.mean_accuracy = j.at("mean_accuracy").get<double>();
        r.std_accuracy = j.at("std_accuracy").get<double>();
        const auto& pc = j.at("per_class_accuracy");
        for (const auto& id : j.at("class_order")) r.per_class_accuracy.emplace_back(id, pc.at(id.get<std::string>()));
        r.num_items = j.at("num_items").get<std::size_t>();
        r.config = j.at("config");
        r.predictions = j.at("predictions").get<std::vector<std::vector<std::string>>>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed eval report: ") + e.what());
    }
    return r;
}

namespace {

double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    return std::max(0.0, 1.0 - cosine_similarity(a, b));
}

std::size_t nearest_center(const EmbeddingVector& p, const std::vector<EmbeddingVector>& centers) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        const double s = cosine_similarity(p, centers[c]);
        if (s > best_sim) {
            best_sim = s;
            best = c;
        }
    }
    return best;
}

}  // namespace

std::vector<std::size_t> spherical_kmeans(const std::vector<EmbeddingVector>& points, std::size_t k,
                                          const ClusteringOptions& options) {
    const std::size_t M = points.size();
    require(k >= 1, "k must be at least 1");
    require(k <= M, "k = " + std::to_string(k) + " exceeds the " + std::to_string(M) + " available concepts");
    std::vector<EmbeddingVector> unit;
    for (const auto& p : points) unit.push_back(normalize(p));

    // k-means++ seeding on squared cosine distance.
    std::mt19937_64 rng(derive_seed(options.seed, "clustering"));
    std::vector<EmbeddingVector> centers{unit[uniform_index(rng, M)]};
    std::vector<double> d2(M);
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const double d = cosine_distance(unit[m], centers[nearest_center(unit[m], centers)]);
            d2[m] = d * d;
            total += d2[m];
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = uniform_index(rng, M);
        } else {
            double u = uniform_unit(rng) * total, acc = 0.0;
            pick = M - 1;
            for (std::size_t m = 0; m < M; ++m) {
                acc += d2[m];
                if (d2[m] > 0.0 && u < acc) {
                    pick = m;
                    break;
                }
            }
            while (d2[pick] <= 0.0) --pick;  // rounding at the tail
        }
        centers.push_back(unit[pick]);
    }

    std::vector<std::size_t> assign(M, k);
    for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
        bool changed = false;
        for (std::size_t m = 0; m < M; ++m) {
            const auto c = nearest_center(unit[m], centers);
            changed |= c != assign[m];
            assign[m] = c;
        }
        if (!changed) break;
        for (std::size_t c = 0; c < k; ++c) {
            Eigen::VectorXd sum = Eigen::VectorXd::Zero(unit[0].size());
            std::size_t n = 0;
            for (std::size_t m = 0; m < M; ++m)
                if (assign[m] == c) {
                    sum += unit[m].cast<double>();
                    ++n;
                }
            if (n == 0 || sum.norm() == 0.0) continue;  // keep the old center
            centers[c] = normalize(sum).cast<float>();
        }
    }

    // Relabel by first appearance so empty clusters leave no gaps.
    std::vector<std::size_t> relabel(k, k);
    std::size_t next = 0;
    for (auto& a : assign) {
        if (relabel[a] == k) relabel[a] = next++;
        a = relabel[a];
    }
    return assign;
}

std::vector<RepresentativeConcept> representative_concepts(const ConceptBank& bank, const std::string& class_id,
                                                           TextEmbeddingProvider& embeddings, std::size_t k,
                                                           const ClusteringOptions& options) {
    const auto& concepts = bank.concepts.at(bank.class_index(class_id));
    const std::size_t M = concepts.size();
    require(k >= 1 && k <= M, "k = " + std::to_string(k) + " must lie in [1, " + std::to_string(M) + "] for class '" +
                                  class_id + "'");
    std::vector<std::string> texts;
    for (const auto& wc : concepts) texts.push_back(wc.item.text);
    const auto vecs = embeddings.embed_prompts(texts);
    require(vecs.size() == M, "embedding provider returned the wrong number of vectors", ErrorKind::provider);
    const auto assign = spherical_kmeans(vecs, k, options);
    const std::size_t clusters = *std::max_element(assign.begin(), assign.end()) + 1;

    std::vector<RepresentativeConcept> rows;
    for (std::size_t c = 0; c < clusters; ++c) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(vecs[0].size());
        std::vector<std::size_t> members;
        for (std::size_t m = 0; m < M; ++m)
            if (assign[m] == c) {
                members.push_back(m);
                sum += normalize(vecs[m]).cast<double>();
            }
        const Eigen::VectorXd centroid = sum.norm() > 0.0 ? Eigen::VectorXd(sum / sum.norm()) : sum;
        std::size_t best = members.front();
        double best_sim = -2.0;
        for (auto m : members) {
            const double s = sum.norm() > 0.0 ? cosine_similarity(normalize(vecs[m]).cast<double>(), centroid) : 0.0;
            if (s > best_sim) {
                best_sim = s;
                best = m;
            }
        }
        rows.push_back({concepts[best].item.text, concepts[best].item.sample_index, members.size(),
                        static_cast<double>(members.size()) / static_cast<double>(M)});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.cluster_size > b.cluster_size; });
    return rows;
}

json to_json(const std::vector<RepresentativeConcept>& rows) {
    json a = json::array();
    for (const auto& r : rows)
        a.push_back({{"concept", r.text}, {"sample_index", r.sample_index}, {"cluster_size", r.cluster_size},
                     {"probability", r.probability}});
    return a;
}

std::vector<RepresentativeConcept> representative_concepts_from_json(const json& j) {
    std::vector<RepresentativeConcept> rows;
    try {
        const json& arr = j.is_object() ? j.at("concepts") : j;
        for (const auto& e : arr)
            rows.push_back({e.at("concept").get<std::string>(), e.at("sample_index").get<std::size_t>(),
                            e.at("cluster_size").get<std::size_t>(), e.at("probability").get<double>()});
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("malformed concept table: ") + e.what());
    }
    return rows;
}

}  // namespace chbr
