#include "chbr/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chbr/error.hpp"
#include "chbr/math.hpp"

namespace chbr {

std::size_t SimilarityTensor::num_views() const { return per_class.empty() ? 0 : per_class.front().cols(); }

std::vector<std::size_t> SimilarityTensor::concept_counts() const {
    std::vector<std::size_t> out;
    for (const auto& m : per_class) out.push_back(static_cast<std::size_t>(m.rows()));
    return out;
}

SimilarityTensor SimilarityTensor::view(std::size_t v) const {
    SimilarityTensor out;
    for (const auto& m : per_class) out.per_class.push_back(m.col(static_cast<Eigen::Index>(v)));
    return out;
}

void validate(const SimilarityTensor& sims) {
    require(!sims.per_class.empty(), "similarity tensor has no classes", ErrorKind::shape);
    const auto views = sims.per_class.front().cols();
    require(views >= 1, "similarity tensor has no views", ErrorKind::shape);
    for (std::size_t i = 0; i < sims.per_class.size(); ++i) {
        const auto& m = sims.per_class[i];
        require(m.rows() >= 1, "class " + std::to_string(i) + " has no concepts", ErrorKind::shape);
        require(m.cols() == views, "ragged view count in similarity tensor", ErrorKind::shape);
        require(m.allFinite(), "non-finite similarity for class " + std::to_string(i), ErrorKind::numeric);
    }
}

std::string_view to_string(LikelihoodKind kind) {
    switch (kind) {
        case LikelihoodKind::average:
            return "average";
        case LikelihoodKind::confidence:
            return "confidence";
        case LikelihoodKind::tta:
            return "tta";
    }
    return "average";
}

LikelihoodKind likelihood_kind_from_string(std::string_view s) {
    if (s == "average") return LikelihoodKind::average;
    if (s == "confidence") return LikelihoodKind::confidence;
    if (s == "tta") return LikelihoodKind::tta;
    throw Error(ErrorKind::precondition, "unknown likelihood '" + std::string(s) + "' (average|confidence|tta)");
}

void validate(const TtaConfig& c) {
    require(c.num_views >= 1, "tta num_views must be >= 1");
    require(c.keep_percent > 0.0 && c.keep_percent <= 100.0, "tta keep percent must lie in (0, 100]");
    require(c.learning_rate > 0.0, "tta learning rate must be positive");
    require(c.logit_scale > 0.0, "tta logit scale must be positive");
    require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0, "optimizer betas must lie in [0, 1)");
    require(c.weight_decay >= 0.0, "weight decay must be >= 0");
}

void validate(const LikelihoodSpec& spec) {
    if (spec.kind == LikelihoodKind::confidence) require(spec.tau > 0.0, "confidence likelihood needs tau > 0");
    if (spec.kind == LikelihoodKind::tta) validate(spec.tta);
}

nlohmann::json to_json(const LikelihoodSpec& spec) {
    nlohmann::json j = {{"kind", to_string(spec.kind)}};
    if (spec.kind == LikelihoodKind::confidence) {
        j["tau"] = spec.tau;
        j["normalization"] =
            spec.normalization == ConfidenceNormalization::within_class ? "within_class" : "across_classes";
    }
    if (spec.kind == LikelihoodKind::tta) {
        const auto& t = spec.tta;
        j["tta"] = {{"views", t.num_views},         {"keep_percent", t.keep_percent}, {"steps", t.steps},
                    {"learning_rate", t.learning_rate}, {"logit_scale", t.logit_scale}, {"beta1", t.beta1},
                    {"beta2", t.beta2},             {"epsilon", t.epsilon},          {"weight_decay", t.weight_decay}};
    }
    return j;
}

ClassVectors bank_weights(const ConceptBank& bank) {
    ClassVectors out;
    for (const auto& list : bank.concepts) {
        Eigen::VectorXd w(static_cast<Eigen::Index>(list.size()));
        for (std::size_t j = 0; j < list.size(); ++j) w(static_cast<Eigen::Index>(j)) = list[j].importance_weight;
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<std::size_t> concept_counts(const ConceptBank& bank) {
    std::vector<std::size_t> out;
    for (const auto& list : bank.concepts) out.push_back(list.size());
    return out;
}

LikelihoodMatrix average_likelihood(const std::vector<std::size_t>& counts) {
    require(!counts.empty(), "average likelihood of an empty bank");
    LikelihoodMatrix out;
    for (auto m : counts) {
        require(m >= 1, "class without concepts");
        out.push_back(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m)));
    }
    return out;
}

LikelihoodMatrix average_likelihood(const ConceptBank& bank) { return average_likelihood(concept_counts(bank)); }

LikelihoodMatrix confidence_likelihood(const SimilarityTensor& sims, double tau,
                                       ConfidenceNormalization normalization) {
    require(tau > 0.0, "confidence likelihood needs tau > 0");
    validate(sims);
    LikelihoodMatrix out;
    if (normalization == ConfidenceNormalization::within_class) {
        for (const auto& m : sims.per_class) out.push_back(softmax(tau * m.col(0)));
        return out;
    }
    const auto M = sims.per_class.front().rows();
    for (const auto& m : sims.per_class)
        require(m.rows() == M, "across-class confidence normalization needs equal concept counts", ErrorKind::shape);
    const auto K = static_cast<Eigen::Index>(sims.num_classes());
    for (Eigen::Index i = 0; i < K; ++i) out.emplace_back(M);
    Eigen::VectorXd column(K);
    for (Eigen::Index j = 0; j < M; ++j) {
        for (Eigen::Index i = 0; i < K; ++i) column(i) = tau * sims.per_class[static_cast<std::size_t>(i)](j, 0);
        const Eigen::VectorXd p = softmax(column);
        for (Eigen::Index i = 0; i < K; ++i) out[static_cast<std::size_t>(i)](j) = p(i);
    }
    return out;
}

namespace {

void check_alignment(const SimilarityTensor& sims, const ClassVectors& per_concept, const char* what) {
    require(per_concept.size() == sims.num_classes(),
            std::string(what) + " covers " + std::to_string(per_concept.size()) + " classes, similarities cover " +
                std::to_string(sims.num_classes()),
            ErrorKind::shape);
    for (std::size_t i = 0; i < per_concept.size(); ++i)
        require(per_concept[i].size() == sims.per_class[i].rows(),
                std::string(what) + " length " + std::to_string(per_concept[i].size()) + " != " +
                    std::to_string(sims.per_class[i].rows()) + " concepts for class " + std::to_string(i),
                ErrorKind::shape);
}

}  // namespace

Eigen::MatrixXd view_class_scores(const SimilarityTensor& sims, const ClassVectors& theta, const ClassVectors& weights) {
    check_alignment(sims, theta, "theta");
    check_alignment(sims, weights, "weights");
    const auto K = static_cast<Eigen::Index>(sims.num_classes());
    const auto N = static_cast<Eigen::Index>(sims.num_views());
    Eigen::MatrixXd scores(K, N);
    for (Eigen::Index i = 0; i < K; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const Eigen::VectorXd mix = softmax(theta[idx]).cwiseProduct(weights[idx]);
        scores.row(i) = mix.transpose() * sims.per_class[idx];
    }
    return scores;
}

double shannon_entropy(const Eigen::Ref<const Eigen::VectorXd>& probs) { return chbr::shannon_entropy(probs.eval()); }

std::size_t retained_view_count(std::size_t num_views, double keep_percent) {
    const auto kept = static_cast<std::size_t>(std::floor(static_cast<double>(num_views) * keep_percent / 100.0));
    return std::clamp<std::size_t>(kept, 1, std::max<std::size_t>(num_views, 1));
}

std::vector<std::size_t> select_confident_views(const Eigen::MatrixXd& view_probs, double keep_percent) {
    const auto N = static_cast<std::size_t>(view_probs.cols());
    require(N >= 1, "confidence selection needs at least one view");
    std::vector<double> entropy(N);
    for (std::size_t n = 0; n < N; ++n)
        entropy[n] = chbr::shannon_entropy(Eigen::VectorXd(view_probs.col(static_cast<Eigen::Index>(n))));
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return entropy[a] < entropy[b]; });
    order.resize(retained_view_count(N, keep_percent));
    return order;
}

Eigen::MatrixXd uniform_view_probabilities(const SimilarityTensor& sims, const ClassVectors& weights,
                                           double logit_scale) {
    ClassVectors zeros;
    for (const auto& m : sims.per_class) zeros.push_back(Eigen::VectorXd::Zero(m.rows()));
    const Eigen::MatrixXd scores = view_class_scores(sims, zeros, weights);
    Eigen::MatrixXd probs(scores.rows(), scores.cols());
    for (Eigen::Index n = 0; n < scores.cols(); ++n) probs.col(n) = softmax(logit_scale * scores.col(n));
    return probs;
}

TtaObjective::TtaObjective(const SimilarityTensor& sims, const ClassVectors& weights, std::vector<std::size_t> views,
                           double logit_scale)
    : logit_scale_(logit_scale) {
    validate(sims);
    check_alignment(sims, weights, "weights");
    require(!views.empty(), "TTA objective needs at least one view");
    for (auto v : views) require(v < sims.num_views(), "retained view index out of range", ErrorKind::shape);
    for (std::size_t i = 0; i < sims.num_classes(); ++i) {
        const auto& m = sims.per_class[i];
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(m.rows());
        for (auto v : views) mean += m.col(static_cast<Eigen::Index>(v));
        mean /= static_cast<double>(views.size());
        weighted_mean_sims_.push_back(mean.cwiseProduct(weights[i]));
        offsets_.push_back(total_);
        total_ += m.rows();
    }
}

ClassVectors TtaObjective::unflatten(const Eigen::VectorXd& theta) const {
    require(theta.size() == total_, "theta has wrong length", ErrorKind::shape);
    ClassVectors out;
    for (std::size_t i = 0; i < offsets_.size(); ++i)
        out.push_back(theta.segment(offsets_[i], weighted_mean_sims_[i].size()));
    return out;
}

Eigen::VectorXd TtaObjective::mean_scores(const Eigen::VectorXd& theta) const {
    require(theta.size() == total_, "theta has wrong length", ErrorKind::shape);
    Eigen::VectorXd a(static_cast<Eigen::Index>(offsets_.size()));
    for (std::size_t i = 0; i < offsets_.size(); ++i) {
        const auto& c = weighted_mean_sims_[i];
        a(static_cast<Eigen::Index>(i)) = softmax(theta.segment(offsets_[i], c.size())).dot(c);
    }
    return a;
}

double TtaObjective::value(const Eigen::VectorXd& theta) const {
    return softmax_entropy((logit_scale_ * mean_scores(theta)).eval());
}

double TtaObjective::value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    const Eigen::VectorXd a = mean_scores(theta);
    const Eigen::VectorXd logp = log_softmax((logit_scale_ * a).eval());
    const Eigen::VectorXd p = logp.array().exp();
    const double h = -(p.array() * logp.array()).sum();
    // dH/dz_k = -p_k (log p_k + H) for z = logit_scale * a.
    const Eigen::VectorXd dh_da = -logit_scale_ * (p.array() * (logp.array() + h)).matrix();
    grad.resize(total_);
    for (std::size_t i = 0; i < offsets_.size(); ++i) {
        const auto& c = weighted_mean_sims_[i];
        const Eigen::VectorXd phi = softmax(theta.segment(offsets_[i], c.size()));
        const double ai = a(static_cast<Eigen::Index>(i));
        grad.segment(offsets_[i], c.size()) =
            dh_da(static_cast<Eigen::Index>(i)) * phi.cwiseProduct((c.array() - ai).matrix());
    }
    return h;
}

TtaResult tta_optimize(const SimilarityTensor& sims, const ClassVectors& weights, const TtaConfig& config) {
    validate(config);
    validate(sims);
    TtaResult result;
    result.retained_views =
        select_confident_views(uniform_view_probabilities(sims, weights, config.logit_scale), config.keep_percent);

    const TtaObjective objective(sims, weights, result.retained_views, config.logit_scale);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(objective.size());
    Eigen::VectorXd grad;
    AdamW<double> optimizer(config.optimizer(), objective.size());
    for (std::size_t step = 0; step < config.steps; ++step) {
        result.entropy_trace.push_back(objective.value_and_gradient(theta, grad));
        if (!grad.allFinite())
            throw Error(ErrorKind::numeric, "non-finite TTA gradient at iteration " + std::to_string(step));
        optimizer.step(theta, grad);
    }
    result.entropy_trace.push_back(objective.value(theta));
    result.initial_entropy = result.entropy_trace.front();
    result.final_entropy = result.entropy_trace.back();
    for (const auto& t : objective.unflatten(theta)) result.likelihood.push_back(softmax(t));
    return result;
}

}  // namespace chbr
