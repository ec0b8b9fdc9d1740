#include "chbr/embedding.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>

#include <json.hpp>

#include "chbr/util.hpp"

namespace chbr {

using nlohmann::json;

std::string_view to_string(EmbeddingKind kind) { return kind == EmbeddingKind::text ? "text" : "image"; }

EmbeddingKind embedding_kind_from_string(std::string_view s) {
    if (s == "text") return EmbeddingKind::text;
    if (s == "image") return EmbeddingKind::image;
    throw Error(ErrorKind::parse, "unknown embedding kind '" + std::string(s) + "'");
}

std::string view_id(std::string_view image_id, std::size_t view) {
    return std::string(image_id) + "#view" + std::to_string(view);
}

EmbeddingStore::EmbeddingStore(std::size_t dim, EmbeddingKind kind) : dim_(dim), kind_(kind), rows_(0, dim) {
    require(dim > 0, "embedding dim must be positive");
}

bool EmbeddingStore::contains(std::string_view id) const { return find(id).has_value(); }

std::optional<std::size_t> EmbeddingStore::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Eigen::Map<const EmbeddingVector> EmbeddingStore::row(std::size_t index) const {
    return {rows_.data() + index * dim_, static_cast<Eigen::Index>(dim_)};
}

Eigen::Map<const EmbeddingVector> EmbeddingStore::at(std::string_view id) const {
    auto idx = find(id);
    if (!idx)
        throw Error(ErrorKind::lookup, "no " + std::string(to_string(kind_)) + " embedding for id '" +
                                           std::string(id) + "'");
    return row(*idx);
}

void EmbeddingStore::add(std::string id, const Eigen::Ref<const Eigen::VectorXf>& raw) {
    require(static_cast<std::size_t>(raw.size()) == dim_,
            "embedding '" + id + "' has dim " + std::to_string(raw.size()) + ", store dim is " +
                std::to_string(dim_),
            ErrorKind::shape);
    add_exact(std::move(id), normalize(raw));
}

void EmbeddingStore::add_exact(std::string id, const Eigen::Ref<const Eigen::VectorXf>& unit) {
    require(static_cast<std::size_t>(unit.size()) == dim_,
            "embedding '" + id + "' has dim " + std::to_string(unit.size()) + ", store dim is " +
                std::to_string(dim_),
            ErrorKind::shape);
    if (index_.count(id)) throw StoreError(StoreErrorCode::duplicate_id, "duplicate embedding id '" + id + "'");
    const auto r = static_cast<Eigen::Index>(ids_.size());
    rows_.conservativeResize(r + 1, Eigen::NoChange);
    rows_.row(r) = unit.transpose();
    index_.emplace(id, ids_.size());
    ids_.push_back(std::move(id));
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
    if (dim_ != other.dim_ || kind_ != other.kind_ || ids_ != other.ids_) return false;
    return std::memcmp(rows_.data(), other.rows_.data(), sizeof(float) * rows_.size()) == 0;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::string serialize_store(const EmbeddingStore& store) {
    const json header = {{"dim", store.dim()}, {"kind", to_string(store.kind())}, {"ids", store.ids()}};
    const std::string h = header.dump();
    std::string out(store_magic, sizeof(store_magic));
    out.push_back(static_cast<char>(store_version));
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    out.reserve(out.size() + 4 * store.matrix().size());
    const float* data = store.matrix().data();
    for (Eigen::Index i = 0; i < store.matrix().size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
    return out;
}

EmbeddingStore deserialize_store(std::string_view bytes) {
    constexpr std::size_t prefix = sizeof(store_magic) + 1 + 4;
    if (bytes.size() < sizeof(store_magic) || std::memcmp(bytes.data(), store_magic, sizeof(store_magic)) != 0)
        throw StoreError(StoreErrorCode::bad_magic, "not an embedding store: bad magic bytes");
    if (bytes.size() < prefix) throw StoreError(StoreErrorCode::truncated_payload, "store truncated inside preamble");
    const auto version = static_cast<std::uint8_t>(bytes[4]);
    if (version != store_version)
        throw StoreError(StoreErrorCode::version_mismatch,
                         "store version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(store_version) + ")");
    const std::uint32_t header_len = get_u32(bytes, 5);
    if (bytes.size() - prefix < header_len)
        throw StoreError(StoreErrorCode::truncated_payload, "store truncated inside JSON header");

    json header;
    std::size_t dim = 0;
    EmbeddingKind kind{};
    std::vector<std::string> ids;
    try {
        header = json::parse(bytes.substr(prefix, header_len));
        dim = header.at("dim").get<std::size_t>();
        kind = embedding_kind_from_string(header.at("kind").get<std::string>());
        ids = header.at("ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw StoreError(StoreErrorCode::bad_header, std::string("malformed store header: ") + e.what());
    } catch (const StoreError&) {
        throw;
    } catch (const Error& e) {
        throw StoreError(StoreErrorCode::bad_header, e.what());
    }
    if (dim == 0) throw StoreError(StoreErrorCode::bad_header, "store header has dim 0");

    const std::size_t payload = bytes.size() - prefix - header_len;
    const std::size_t row_bytes = 4 * dim;
    const std::size_t want = row_bytes * ids.size();
    if (payload < want)
        throw StoreError(StoreErrorCode::truncated_payload,
                         "store payload has " + std::to_string(payload) + " bytes, header requires " +
                             std::to_string(ids.size()) + " rows of " + std::to_string(row_bytes) + " bytes");
    if (payload > want)
        throw StoreError(StoreErrorCode::trailing_data,
                         "store payload has " + std::to_string(payload - want) + " unexpected trailing bytes");

    EmbeddingStore store(dim, kind);
    Eigen::VectorXf row(static_cast<Eigen::Index>(dim));
    std::size_t at = prefix + header_len;
    for (const auto& id : ids) {
        for (std::size_t k = 0; k < dim; ++k, at += 4)
            row(static_cast<Eigen::Index>(k)) = std::bit_cast<float>(get_u32(bytes, at));
        double sq = 0.0;
        for (Eigen::Index k = 0; k < row.size(); ++k) sq += static_cast<double>(row(k)) * row(k);
        const double norm = std::sqrt(sq);
        if (!(std::abs(norm - 1.0) <= store_norm_tolerance))
            throw StoreError(StoreErrorCode::not_unit_norm,
                             "embedding '" + id + "' has norm " + std::to_string(norm));
        store.add_exact(id, row);  // throws duplicate_id
    }
    return store;
}

void save_store(const EmbeddingStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError(StoreErrorCode::io, "cannot write store '" + path + "'");
    const std::string bytes = serialize_store(store);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StoreError(StoreErrorCode::io, "short write to store '" + path + "'");
}

EmbeddingStore load_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::precondition, "cannot open store '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_store(bytes);
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbedConfig config) : config_(std::move(config)) {
    require(!config_.base_url.empty(), "remote embedder needs a base_url");
    require(config_.max_in_flight >= 1, "max_in_flight must be >= 1");
    require(config_.batch_size >= 1, "batch_size must be >= 1");
    if (!config_.api_key) config_.api_key = env_secret("CHBR_EMBED_API_KEY");
}

std::vector<EmbeddingVector> RemoteEmbedder::embed(EmbeddingKind kind, const std::vector<std::string>& payloads,
                                                   std::optional<std::size_t> expected_dim) {
    require(!payloads.empty(), "remote_embed: payload list is empty");
    const std::size_t batches = (payloads.size() + config_.batch_size - 1) / config_.batch_size;
    std::vector<std::vector<EmbeddingVector>> results(batches);
    std::vector<std::size_t> retries(batches, 0);

    parallel_for(batches, config_.max_in_flight, [&](std::size_t b) {
        const auto first = b * config_.batch_size;
        const auto last = std::min(payloads.size(), first + config_.batch_size);
        HttpPost post;
        post.base_url = config_.base_url;
        post.path = "/embed";
        post.body = {{"kind", to_string(kind)},
                     {"payloads", std::vector<std::string>(payloads.begin() + first, payloads.begin() + last)}};
        post.bearer_token = config_.api_key;
        post.timeout_seconds = config_.timeout_seconds;
        const json reply = with_retries(config_.retry, [&] { return post_json_once(post); }, &retries[b]);
        try {
            const auto dim = reply.at("dim").get<std::size_t>();
            const auto& vectors = reply.at("vectors");
            if (vectors.size() != last - first)
                throw Error(ErrorKind::provider, "embedding service returned " + std::to_string(vectors.size()) +
                                                     " vectors for " + std::to_string(last - first) + " payloads");
            for (const auto& v : vectors) {
                const auto values = v.get<std::vector<float>>();
                if (values.size() != dim)
                    throw Error(ErrorKind::shape, "embedding service vector length " + std::to_string(values.size()) +
                                                      " disagrees with reported dim " + std::to_string(dim));
                results[b].push_back(normalize(Eigen::Map<const Eigen::VectorXf>(
                    values.data(), static_cast<Eigen::Index>(values.size()))));
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::provider, std::string("malformed embedding response: ") + e.what());
        }
    });

    std::vector<EmbeddingVector> out;
    out.reserve(payloads.size());
    for (std::size_t b = 0; b < batches; ++b) {
        diag_.retries += retries[b];
        for (auto& v : results[b]) out.push_back(std::move(v));
    }
    diag_.requests += batches;
    const auto dim = static_cast<std::size_t>(out.front().size());
    for (const auto& v : out)
        require(static_cast<std::size_t>(v.size()) == dim, "embedding service returned mixed dimensions",
                ErrorKind::shape);
    if (expected_dim && *expected_dim != dim)
        throw Error(ErrorKind::shape, "embedding service dim " + std::to_string(dim) + " disagrees with store dim " +
                                          std::to_string(*expected_dim));
    return out;
}

std::string base64_encode(std::string_view bytes) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const auto n = (std::uint32_t(static_cast<unsigned char>(bytes[i])) << 16) |
                       (std::uint32_t(static_cast<unsigned char>(bytes[i + 1])) << 8) |
                       std::uint32_t(static_cast<unsigned char>(bytes[i + 2]));
        out += table[(n >> 18) & 63];
        out += table[(n >> 12) & 63];
        out += table[(n >> 6) & 63];
        out += table[n & 63];
    }
    if (i < bytes.size()) {
        std::uint32_t n = std::uint32_t(static_cast<unsigned char>(bytes[i])) << 16;
        if (i + 1 < bytes.size()) n |= std::uint32_t(static_cast<unsigned char>(bytes[i + 1])) << 8;
        out += table[(n >> 18) & 63];
        out += table[(n >> 12) & 63];
        out += i + 1 < bytes.size() ? table[(n >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

}  // namespace chbr
