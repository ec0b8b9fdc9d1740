#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "chbr/error.hpp"
#include "chbr/http.hpp"

namespace chbr {

using EmbeddingVector = Eigen::VectorXf;

/// Scales `v` to unit Euclidean norm. The norm is accumulated in double
/// regardless of the input scalar.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> normalize(
    const Eigen::MatrixBase<Derived>& v) {
    using Scalar = typename Derived::Scalar;
    double sq = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double x = static_cast<double>(v(i));
        sq += x * x;
    }
    if (!(sq > 0.0) || !std::isfinite(sq))
        throw Error(ErrorKind::degenerate_input, "cannot normalize a zero or non-finite vector");
    const double inv = 1.0 / std::sqrt(sq);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out(i) = static_cast<Scalar>(static_cast<double>(v(i)) * inv);
    return out;
}

/// Dot product of two unit vectors at 64-bit precision, accumulated strictly
/// left to right so that cosine_similarity(a, b) == cosine_similarity(b, a).
template <typename DerivedA, typename DerivedB>
double cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    if (a.size() != b.size())
        throw Error(ErrorKind::shape, "cosine_similarity: dimension mismatch " +
                                          std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        acc += static_cast<double>(a(i)) * static_cast<double>(b(i));
    return acc;
}

enum class EmbeddingKind { text, image };

std::string_view to_string(EmbeddingKind kind);
EmbeddingKind embedding_kind_from_string(std::string_view s);

/// Id under which the n-th augmented view of an image is stored.
std::string view_id(std::string_view image_id, std::size_t view);

class EmbeddingStore {
   public:
    using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    EmbeddingStore(std::size_t dim, EmbeddingKind kind);

    std::size_t dim() const { return dim_; }
    EmbeddingKind kind() const { return kind_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const Matrix& matrix() const { return rows_; }

    bool contains(std::string_view id) const;
    std::optional<std::size_t> find(std::string_view id) const;
    /// Throws a lookup error naming the id when absent.
    Eigen::Map<const EmbeddingVector> at(std::string_view id) const;
    Eigen::Map<const EmbeddingVector> row(std::size_t index) const;

    /// Normalizes `raw` and appends it; throws on duplicate id or wrong dim.
    void add(std::string id, const Eigen::Ref<const Eigen::VectorXf>& raw);
    /// Appends an already-normalized vector without rescaling (bit-exact).
    void add_exact(std::string id, const Eigen::Ref<const Eigen::VectorXf>& unit);

    bool operator==(const EmbeddingStore& other) const;

   private:
    std::size_t dim_;
    EmbeddingKind kind_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> index_;
    Matrix rows_;
};

enum class StoreErrorCode {
    bad_magic,
    version_mismatch,
    truncated_payload,
    trailing_data,
    bad_header,
    duplicate_id,
    not_unit_norm,
    io,
};

class StoreError : public Error {
   public:
    StoreError(StoreErrorCode code, const std::string& what)
        : Error(ErrorKind::store_format, what), code_(code) {}
    StoreErrorCode code() const noexcept { return code_; }

   private:
    StoreErrorCode code_;
};

inline constexpr char store_magic[4] = {'C', 'H', 'B', 'R'};
inline constexpr std::uint8_t store_version = 1;
inline constexpr double store_norm_tolerance = 1e-5;

std::string serialize_store(const EmbeddingStore& store);
EmbeddingStore deserialize_store(std::string_view bytes);
void save_store(const EmbeddingStore& store, const std::string& path);
EmbeddingStore load_store(const std::string& path);

struct RemoteEmbedConfig {
    std::string base_url;
    double timeout_seconds = 60.0;
    std::size_t max_in_flight = 4;
    std::size_t batch_size = 64;
    RetryPolicy retry;
    std::optional<std::string> api_key;  // defaults to CHBR_EMBED_API_KEY
};

struct RemoteEmbedDiagnostics {
    std::size_t requests = 0;
    std::size_t retries = 0;
};

/// Client for POST {base_url}/embed. Payloads are split into batches, sent
/// with at most max_in_flight concurrent requests and returned in request
/// order, each normalized.
class RemoteEmbedder {
   public:
    explicit RemoteEmbedder(RemoteEmbedConfig config);

    std::vector<EmbeddingVector> embed(EmbeddingKind kind, const std::vector<std::string>& payloads,
                                       std::optional<std::size_t> expected_dim = std::nullopt);

    const RemoteEmbedDiagnostics& diagnostics() const { return diag_; }

   private:
    RemoteEmbedConfig config_;
    RemoteEmbedDiagnostics diag_;
};

std::string base64_encode(std::string_view bytes);

}  // namespace chbr
