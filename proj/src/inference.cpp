#include "chbr/inference.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numeric>

#include "chbr/error.hpp"
#include "chbr/math.hpp"
#include "chbr/util.hpp"

namespace chbr {

std::vector<EmbeddingVector> StoreTextProvider::embed_prompts(const std::vector<std::string>& prompts) {
    std::vector<EmbeddingVector> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) {
        const auto idx = store_.find(content_id(p));
        if (!idx)
            throw Error(ErrorKind::lookup,
                        "text store has no embedding for prompt \"" + p + "\" (id " + content_id(p) + ")");
        out.emplace_back(store_.row(*idx));
    }
    return out;
}

std::vector<EmbeddingVector> RemoteTextProvider::embed_prompts(const std::vector<std::string>& prompts) {
    return client_.embed(EmbeddingKind::text, prompts);
}

std::vector<EmbeddingVector> PromptEmbeddingCache::get(const std::vector<std::string>& prompts) {
    std::vector<EmbeddingVector> out(prompts.size());
    std::vector<std::size_t> missing;
    {
        std::shared_lock lock(mutex_);
        for (std::size_t k = 0; k < prompts.size(); ++k) {
            auto it = entries_.find(fnv1a64(prompts[k]));
            if (it == entries_.end()) {
                missing.push_back(k);
                continue;
            }
            if (it->second.prompt != prompts[k])
                throw Error(ErrorKind::lookup, "prompt hash collision between \"" + it->second.prompt + "\" and \"" +
                                                   prompts[k] + "\"");
            out[k] = it->second.vector;
        }
    }
    if (missing.empty()) return out;

    std::vector<std::string> unique;
    std::unordered_map<std::string, std::size_t> slot;
    for (auto k : missing)
        if (slot.emplace(prompts[k], unique.size()).second) unique.push_back(prompts[k]);
    const auto fetched = backend_.embed_prompts(unique);
    require(fetched.size() == unique.size(), "text provider returned the wrong number of embeddings",
            ErrorKind::provider);

    std::unique_lock lock(mutex_);
    ++backend_requests_;
    for (std::size_t u = 0; u < unique.size(); ++u) {
        auto [it, inserted] = entries_.try_emplace(fnv1a64(unique[u]), Entry{unique[u], fetched[u]});
        if (!inserted && it->second.prompt != unique[u])
            throw Error(ErrorKind::lookup,
                        "prompt hash collision between \"" + it->second.prompt + "\" and \"" + unique[u] + "\"");
    }
    for (auto k : missing) out[k] = entries_.at(fnv1a64(prompts[k])).vector;
    return out;
}

std::size_t PromptEmbeddingCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

std::vector<EmbeddingVector> StoreImageProvider::views(const std::string& image_id, std::size_t num_views,
                                                       std::uint64_t) {
    require(num_views >= 1, "at least one view is required");
    std::vector<EmbeddingVector> out;
    if (num_views == 1) {
        if (auto idx = store_.find(image_id)) return {EmbeddingVector(store_.row(*idx))};
    }
    for (std::size_t n = 0; n < num_views; ++n) {
        const auto id = view_id(image_id, n);
        auto idx = store_.find(id);
        if (!idx && n == 0) idx = store_.find(image_id);
        if (!idx) throw Error(ErrorKind::lookup, "image store has no embedding for id '" + id + "'");
        out.emplace_back(store_.row(*idx));
    }
    return out;
}

RemoteImageProvider::RemoteImageProvider(RemoteEmbedder& client, std::string image_dir,
                                         std::shared_ptr<const Augmenter> augmenter)
    : client_(client), image_dir_(std::move(image_dir)), augmenter_(std::move(augmenter)) {
    if (!augmenter_) augmenter_ = std::make_shared<RandomResizedCropAugmenter>();
}

std::vector<EmbeddingVector> RemoteImageProvider::views(const std::string& image_id, std::size_t num_views,
                                                        std::uint64_t seed) {
    const auto path = (std::filesystem::path(image_dir_) / (image_id + ".ppm")).string();
    const Image image = load_image(path);
    const auto rasters = augmenter_->augment(image, num_views, derive_seed(seed, "augmenter", {fnv1a64(image_id)}));
    std::vector<std::string> payloads;
    payloads.reserve(rasters.size());
    for (const auto& r : rasters) payloads.push_back(base64_encode(encode_ppm(r)));
    return client_.embed(EmbeddingKind::image, payloads);
}

SimilarityTensor build_similarity_tensor(const std::vector<EmbeddingVector>& views, const ConceptBank& bank,
                                         PromptEmbeddingCache& prompts, const PromptTemplate& tmpl) {
    require(!views.empty(), "similarity tensor needs at least one image view");
    std::vector<std::string> rendered;
    for (std::size_t i = 0; i < bank.classes.size(); ++i)
        for (const auto& wc : bank.concepts[i]) rendered.push_back(render_prompt(tmpl, bank.classes[i], wc.item));
    const auto text = prompts.get(rendered);

    SimilarityTensor sims;
    std::size_t k = 0;
    const auto N = static_cast<Eigen::Index>(views.size());
    for (std::size_t i = 0; i < bank.classes.size(); ++i) {
        const auto M = static_cast<Eigen::Index>(bank.concepts[i].size());
        Eigen::MatrixXd m(M, N);
        for (Eigen::Index j = 0; j < M; ++j, ++k)
            for (Eigen::Index n = 0; n < N; ++n) m(j, n) = cosine_similarity(text[k], views[static_cast<std::size_t>(n)]);
        sims.per_class.push_back(std::move(m));
    }
    return sims;
}

double marginal_score(const Eigen::Ref<const Eigen::VectorXd>& sims, const Eigen::Ref<const Eigen::VectorXd>& likelihood,
                      const Eigen::Ref<const Eigen::VectorXd>& weights) {
    require(sims.size() == likelihood.size() && sims.size() == weights.size(),
            "marginal_score: lengths " + std::to_string(sims.size()) + "/" + std::to_string(likelihood.size()) + "/" +
                std::to_string(weights.size()) + " differ",
            ErrorKind::shape);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < sims.size(); ++j) acc += sims(j) * likelihood(j) * weights(j);
    return acc;
}

std::size_t argmax_first(const Eigen::Ref<const Eigen::VectorXd>& scores) {
    require(scores.size() > 0, "argmax of an empty vector");
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i)
        if (scores(i) > scores(best)) best = i;
    return static_cast<std::size_t>(best);
}

PredictionResult predict_from_similarities(const SimilarityTensor& sims, const ConceptBank& bank,
                                           const LikelihoodSpec& spec, std::size_t top_k) {
    validate(spec);
    validate(sims);
    require(sims.num_classes() == bank.classes.size(), "similarity tensor and bank disagree on class count",
            ErrorKind::shape);
    const auto weights = bank_weights(bank);

    PredictionResult result;
    result.classes = bank.classes;
    std::vector<std::size_t> views{0};
    switch (spec.kind) {
        case LikelihoodKind::average:
            result.likelihood = average_likelihood(bank);
            break;
        case LikelihoodKind::confidence:
            result.likelihood = confidence_likelihood(sims.view(0), spec.tau, spec.normalization);
            break;
        case LikelihoodKind::tta: {
            result.tta = tta_optimize(sims, weights, spec.tta);
            result.likelihood = result.tta->likelihood;
            views = result.tta->retained_views;
            break;
        }
    }

    const auto K = static_cast<Eigen::Index>(bank.classes.size());
    result.scores = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < K; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto& m = sims.per_class[idx];
        require(m.rows() == weights[idx].size(), "similarity rows disagree with the bank for class '" + bank.classes[idx].id + "'",
                ErrorKind::shape);
        double total = 0.0;
        for (auto v : views) total += marginal_score(m.col(static_cast<Eigen::Index>(v)), result.likelihood[idx], weights[idx]);
        result.scores(i) = total / static_cast<double>(views.size());

        std::vector<ConceptContribution> contrib;
        for (Eigen::Index j = 0; j < m.rows(); ++j) {
            double sim = 0.0;
            for (auto v : views) sim += m(j, static_cast<Eigen::Index>(v));
            sim /= static_cast<double>(views.size());
            const auto& wc = bank.concepts[idx][static_cast<std::size_t>(j)];
            contrib.push_back({wc.item.text, wc.item.sample_index, sim, result.likelihood[idx](j),
                               weights[idx](j), sim * result.likelihood[idx](j) * weights[idx](j)});
        }
        std::stable_sort(contrib.begin(), contrib.end(),
                         [](const auto& a, const auto& b) { return a.contribution > b.contribution; });
        contrib.resize(std::min(contrib.size(), top_k));
        result.top_contributions.push_back(std::move(contrib));
    }
    result.predicted_index = argmax_first(result.scores);
    result.predicted = bank.classes[result.predicted_index];
    return result;
}

PredictionResult predict(const std::string& image_id, const ConceptBank& bank, const LikelihoodSpec& spec,
                         Providers& providers, const PredictOptions& options) {
    validate(bank);
    const std::size_t N = spec.kind == LikelihoodKind::tta ? spec.tta.num_views : 1;
    const auto views = providers.images.views(image_id, N, options.seed);
    SimilarityTensor sims = build_similarity_tensor(views, bank, providers.prompts, options.prompt_template);
    if (options.similarity_scale != 1.0)
        for (auto& m : sims.per_class) m *= options.similarity_scale;
    return predict_from_similarities(sims, bank, spec, options.top_k);
}

Eigen::VectorXd display_probabilities(const PredictionResult& result, double scale) {
    return softmax((scale * result.scores).eval());
}

nlohmann::json prediction_to_json(const std::string& image_id, const PredictionResult& result, bool with_diagnostics,
                                  LikelihoodKind kind) {
    nlohmann::json scores = nlohmann::json::object();
    for (std::size_t i = 0; i < result.classes.size(); ++i)
        scores[result.classes[i].id] = result.scores(static_cast<Eigen::Index>(i));
    nlohmann::json j = {{"image_id", image_id}, {"predicted", result.predicted.id}, {"scores", scores}};
    if (with_diagnostics) j["diagnostics"] = trace_record(image_id, result, kind);
    return j;
}

nlohmann::json trace_record(const std::string& image_id, const PredictionResult& result, LikelihoodKind kind) {
    nlohmann::json top = nlohmann::json::object();
    for (std::size_t i = 0; i < result.classes.size(); ++i) {
        if (result.top_contributions[i].empty()) continue;
        const auto& c = result.top_contributions[i].front();
        top[result.classes[i].id] = {{"concept", c.text},
                                     {"sample_index", c.sample_index},
                                     {"similarity", c.similarity},
                                     {"likelihood", c.likelihood},
                                     {"weight", c.weight},
                                     {"contribution", c.contribution}};
    }
    nlohmann::json j = {{"image_id", image_id}, {"kind", to_string(kind)}, {"per_class_top_concept", top}};
    if (result.tta) {
        j["initial_entropy"] = result.tta->initial_entropy;
        j["final_entropy"] = result.tta->final_entropy;
        j["retained_views"] = result.tta->retained_views;
    } else {
        j["initial_entropy"] = nullptr;
        j["final_entropy"] = nullptr;
        j["retained_views"] = std::vector<std::size_t>{0};
    }
    return j;
}

}  // namespace chbr
