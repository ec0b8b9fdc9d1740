#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "chbr/adamw.hpp"
#include "chbr/core.hpp"

namespace chbr {

/// One vector per class; entry j belongs to concept j of that class.
using ClassVectors = std::vector<Eigen::VectorXd>;
using LikelihoodMatrix = ClassVectors;

/// Concept-conditioned similarities p(Y_i | X_n, C_ij): per class a matrix
/// with one row per concept and one column per view (a single column when
/// there is no augmentation).
struct SimilarityTensor {
    std::vector<Eigen::MatrixXd> per_class;

    std::size_t num_classes() const { return per_class.size(); }
    std::size_t num_views() const;
    std::vector<std::size_t> concept_counts() const;
    /// Single-view tensor holding only column `view`.
    SimilarityTensor view(std::size_t view) const;
};

/// Throws a numeric error for non-finite entries and a shape error for
/// ragged view counts.
void validate(const SimilarityTensor& sims);

enum class LikelihoodKind { average, confidence, tta };
enum class ConfidenceNormalization { within_class, across_classes };

std::string_view to_string(LikelihoodKind kind);
LikelihoodKind likelihood_kind_from_string(std::string_view s);

struct TtaConfig {
    std::size_t num_views = 64;  // N
    double keep_percent = 10.0;  // r
    std::size_t steps = 30;
    double learning_rate = 1.0;
    double logit_scale = 100.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;

    AdamWConfig optimizer() const { return {learning_rate, beta1, beta2, epsilon, weight_decay}; }
};

void validate(const TtaConfig& config);

struct LikelihoodSpec {
    LikelihoodKind kind = LikelihoodKind::average;
    double tau = 3.0;
    ConfidenceNormalization normalization = ConfidenceNormalization::within_class;
    TtaConfig tta;
};

void validate(const LikelihoodSpec& spec);
nlohmann::json to_json(const LikelihoodSpec& spec);

/// Importance weights of the bank, one vector per class.
ClassVectors bank_weights(const ConceptBank& bank);
std::vector<std::size_t> concept_counts(const ConceptBank& bank);

/// Uniform 1/M_i per class.
LikelihoodMatrix average_likelihood(const std::vector<std::size_t>& concept_counts);
LikelihoodMatrix average_likelihood(const ConceptBank& bank);

/// Temperature softmax of the view-0 similarities. within_class normalizes
/// over the concepts of each class; across_classes normalizes over classes at
/// a fixed concept index and needs equal M_i.
LikelihoodMatrix confidence_likelihood(const SimilarityTensor& sims, double tau,
                                       ConfidenceNormalization normalization = ConfidenceNormalization::within_class);

/// K x N matrix of per-view class scores sum_j sims_ij,n * softmax(theta_i)_j * w_ij.
Eigen::MatrixXd view_class_scores(const SimilarityTensor& sims, const ClassVectors& theta, const ClassVectors& weights);

/// Natural-log entropy of a probability vector.
double shannon_entropy(const Eigen::Ref<const Eigen::VectorXd>& probs);

std::size_t retained_view_count(std::size_t num_views, double keep_percent);

/// Indices of the max(1, floor(N r / 100)) lowest-entropy columns of
/// `view_probs` (K x N), ascending by entropy, ties to the lower index.
std::vector<std::size_t> select_confident_views(const Eigen::MatrixXd& view_probs, double keep_percent);

/// Entropy of softmax(logit_scale * mean over `views` of the class scores)
/// and its analytic gradient with respect to the flattened theta.
class TtaObjective {
   public:
    TtaObjective(const SimilarityTensor& sims, const ClassVectors& weights, std::vector<std::size_t> views,
                 double logit_scale);

    Eigen::Index size() const { return total_; }
    double value(const Eigen::VectorXd& theta) const;
    double value_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;

    ClassVectors unflatten(const Eigen::VectorXd& theta) const;
    /// Mean class scores over the retained views.
    Eigen::VectorXd mean_scores(const Eigen::VectorXd& theta) const;

   private:
    std::vector<Eigen::VectorXd> weighted_mean_sims_;  // c_ij = mean_n sims_ij,n * w_ij
    std::vector<Eigen::Index> offsets_;
    Eigen::Index total_ = 0;
    double logit_scale_;
};

struct TtaResult {
    LikelihoodMatrix likelihood;
    std::vector<std::size_t> retained_views;
    double initial_entropy = 0.0;
    double final_entropy = 0.0;
    std::vector<double> entropy_trace;  // entropy before each step, then the final value
};

/// Entropy minimization over per-class concept logits theta, starting from
/// zero. Confident views are chosen once at theta = 0.
TtaResult tta_optimize(const SimilarityTensor& sims, const ClassVectors& weights, const TtaConfig& config);

/// Per-view probabilities softmax(logit_scale * scores) at theta = 0.
Eigen::MatrixXd uniform_view_probabilities(const SimilarityTensor& sims, const ClassVectors& weights,
                                           double logit_scale);

}  // namespace chbr
