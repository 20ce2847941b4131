#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "capfuse/dataset/types.hpp"
#include "capfuse/error.hpp"
#include "capfuse/linalg.hpp"

namespace capfuse {

// On-disk layout of a store directory:
//   manifest.json   version, dim, count, dtype="f32le", encoder_id, id/label tables
//   embeddings.bin  count x dim little-endian f32, row-major, no header
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "embeddings.bin";

/// Frozen encoder outputs for images, captions, and per-class templates.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(std::size_t dim, std::string encoder_id, std::vector<std::string> class_names)
        : dim_(dim), encoder_id_(std::move(encoder_id)), class_names_(std::move(class_names)) {
        if (dim_ == 0) fail(Errc::InvalidArgument, "store dim must be positive");
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return dim_ ? blob_.size() / dim_ : 0; }
    const std::string& encoder_id() const noexcept { return encoder_id_; }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }
    std::size_t num_classes() const noexcept { return class_names_.size(); }
    const std::vector<SampleRecord>& samples() const noexcept { return samples_; }
    std::span<const float> blob() const noexcept { return blob_; }

    int class_id(std::string_view name) const {
        for (std::size_t k = 0; k < class_names_.size(); ++k)
            if (class_names_[k] == name) return static_cast<int>(k);
        fail(Errc::InvalidArgument, "unknown class '" + std::string(name) + "'");
    }

    /// Adds an image row; the sample's class_name is taken from the class table.
    void add_image(std::string sample_id, int class_id, Split split, std::span<const float> embedding) {
        check_class(class_id);
        if (image_rows_.contains(sample_id)) fail(Errc::InvalidArgument, "duplicate sample_id '" + sample_id + "'");
        const std::size_t row = append_row(embedding);
        image_rows_.emplace(sample_id, row);
        sample_index_.emplace(sample_id, samples_.size());
        samples_.push_back({std::move(sample_id), class_id, class_names_[class_id], split});
    }

    void add_text(const std::string& sample_id, Characteristic c, std::span<const float> embedding) {
        auto key = std::make_pair(sample_id, c);
        if (text_rows_.contains(key)) fail(Errc::InvalidArgument, "duplicate text row for '" + sample_id + "'");
        text_rows_.emplace(std::move(key), append_row(embedding));
    }

    void add_template(int class_id, std::span<const float> embedding) {
        check_class(class_id);
        if (template_rows_.contains(class_id)) fail(Errc::InvalidArgument, "duplicate template row");
        template_rows_.emplace(class_id, append_row(embedding));
    }

    bool has_image(const std::string& sample_id) const { return image_rows_.contains(sample_id); }
    bool has_text(const std::string& sample_id, Characteristic c) const {
        return text_rows_.contains({sample_id, c});
    }
    bool has_template(int class_id) const { return template_rows_.contains(class_id); }

    std::span<const float> image(const std::string& sample_id) const {
        auto it = image_rows_.find(sample_id);
        if (it == image_rows_.end()) fail(Errc::MissingEmbedding, "no image embedding for '" + sample_id + "'");
        return row(it->second);
    }
    std::span<const float> text(const std::string& sample_id, Characteristic c) const {
        auto it = text_rows_.find({sample_id, c});
        if (it == text_rows_.end())
            fail(Errc::MissingEmbedding,
                 "no text embedding for ('" + sample_id + "', " + std::string(to_string(c)) + ")");
        return row(it->second);
    }
    std::span<const float> template_text(int class_id) const {
        auto it = template_rows_.find(class_id);
        if (it == template_rows_.end())
            fail(Errc::MissingEmbedding, "no template embedding for class " + std::to_string(class_id));
        return row(it->second);
    }

    const SampleRecord& sample(const std::string& sample_id) const {
        auto it = sample_index_.find(sample_id);
        if (it != sample_index_.end()) return samples_[it->second];
        fail(Errc::MissingEmbedding, "unknown sample '" + sample_id + "'");
    }

    std::vector<SampleRecord> split(Split s) const {
        std::vector<SampleRecord> out;
        for (const auto& r : samples_)
            if (r.split == s) out.push_back(r);
        return out;
    }

    std::span<const float> row(std::size_t r) const {
        if (r >= count()) fail(Errc::CorruptManifest, "row index " + std::to_string(r) + " out of range");
        return {blob_.data() + r * dim_, dim_};
    }

    nlohmann::json manifest() const {
        nlohmann::json images = nlohmann::json::array();
        for (const auto& s : samples_)
            images.push_back({{"sample_id", s.sample_id},
                              {"class_id", s.class_id},
                              {"split", to_string(s.split)},
                              {"row", image_rows_.at(s.sample_id)}});
        nlohmann::json texts = nlohmann::json::array();
        for (const auto& [key, r] : text_rows_)
            texts.push_back({{"sample_id", key.first}, {"characteristic", to_string(key.second)}, {"row", r}});
        nlohmann::json templates = nlohmann::json::array();
        for (const auto& [k, r] : template_rows_) templates.push_back({{"class_id", k}, {"row", r}});
        return {{"version", 1},     {"dim", dim_},        {"count", count()},  {"dtype", "f32le"},
                {"encoder_id", encoder_id_}, {"classes", class_names_}, {"images", images},
                {"texts", texts},   {"templates", templates}};
    }

    friend EmbeddingStore load_store(const std::filesystem::path& dir);

    friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;

private:
    void check_class(int class_id) const {
        if (class_id < 0 || static_cast<std::size_t>(class_id) >= class_names_.size())
            fail(Errc::InvalidArgument, "class_id " + std::to_string(class_id) + " outside class table");
    }

    std::size_t append_row(std::span<const float> embedding) {
        if (embedding.size() != dim_)
            fail(Errc::DimMismatch, "embedding has dim " + std::to_string(embedding.size()) + ", store dim is " +
                                        std::to_string(dim_));
        const std::size_t r = count();
        blob_.insert(blob_.end(), embedding.begin(), embedding.end());
        return r;
    }

    std::size_t dim_ = 0;
    std::string encoder_id_;
    std::vector<std::string> class_names_;
    std::vector<SampleRecord> samples_;
    std::map<std::string, std::size_t> image_rows_;
    std::map<std::string, std::size_t> sample_index_;
    std::map<std::pair<std::string, Characteristic>, std::size_t> text_rows_;
    std::map<int, std::size_t> template_rows_;
    std::vector<float> blob_;
};

inline Vec to_vec(std::span<const float> xs) {
    return Vec(std::vector<double>(xs.begin(), xs.end()));
}

namespace detail {

inline void write_f32le(std::ostream& os, std::span<const float> xs) {
    std::vector<unsigned char> bytes(xs.size() * 4);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(xs[i]);
        for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<float> read_f32le(const std::vector<unsigned char>& bytes) {
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + p.string());
    out << text;
    if (!out) fail(Errc::IoError, "short write to " + p.string());
}

} // namespace detail

inline void save_store(const EmbeddingStore& store, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    detail::write_text_file(dir / kManifestFile, store.manifest().dump(2) + "\n");
    std::ofstream out(dir / kBlobFile, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + (dir / kBlobFile).string());
    detail::write_f32le(out, store.blob());
    if (!out) fail(Errc::IoError, "short write to " + (dir / kBlobFile).string());
}

inline EmbeddingStore load_store(const std::filesystem::path& dir) {
    const auto manifest_path = dir / kManifestFile;
    if (!std::filesystem::exists(manifest_path)) fail(Errc::IoError, "missing " + manifest_path.string());
    if (!std::filesystem::exists(dir / kBlobFile)) fail(Errc::IoError, "missing " + (dir / kBlobFile).string());

    nlohmann::json m;
    {
        std::ifstream in(manifest_path);
        m = nlohmann::json::parse(in, nullptr, false);
    }
    if (m.is_discarded() || !m.is_object()) fail(Errc::BadMagic, manifest_path.string() + " is not a JSON object");
    if (m.value("version", -1) != 1) fail(Errc::BadMagic, "unsupported manifest version");
    if (m.value("dtype", std::string()) != "f32le") fail(Errc::BadMagic, "unsupported dtype (expected f32le)");

    EmbeddingStore s;
    try {
        s.dim_ = m.at("dim").get<std::size_t>();
        s.encoder_id_ = m.at("encoder_id").get<std::string>();
        s.class_names_ = m.at("classes").get<std::vector<std::string>>();
        const auto count = m.at("count").get<std::size_t>();
        if (s.dim_ == 0) fail(Errc::CorruptManifest, "dim must be positive");

        const auto bytes = detail::read_bytes(dir / kBlobFile);
        const std::size_t row_bytes = s.dim_ * 4;
        if (bytes.size() % row_bytes != 0)
            fail(Errc::TruncatedBlob, "blob size is not a whole number of rows");
        const std::size_t blob_rows = bytes.size() / row_bytes;
        if (blob_rows < count)
            fail(Errc::TruncatedBlob, "manifest count " + std::to_string(count) + ", blob holds " +
                                          std::to_string(blob_rows) + " rows");
        if (blob_rows > count)
            fail(Errc::CorruptManifest, "blob holds more rows than manifest count");
        s.blob_ = detail::read_f32le(bytes);

        std::vector<bool> used(count, false);
        auto claim = [&](std::size_t r) {
            if (r >= count) fail(Errc::CorruptManifest, "row " + std::to_string(r) + " beyond count");
            if (used[r]) fail(Errc::CorruptManifest, "row " + std::to_string(r) + " indexed twice");
            used[r] = true;
            return r;
        };
        for (const auto& e : m.at("images")) {
            const auto id = e.at("sample_id").get<std::string>();
            const int k = e.at("class_id").get<int>();
            if (k < 0 || static_cast<std::size_t>(k) >= s.class_names_.size())
                fail(Errc::CorruptManifest, "class_id outside class table");
            if (s.image_rows_.contains(id)) fail(Errc::CorruptManifest, "duplicate sample_id '" + id + "'");
            s.image_rows_.emplace(id, claim(e.at("row").get<std::size_t>()));
            s.sample_index_.emplace(id, s.samples_.size());
            s.samples_.push_back({id, k, s.class_names_[k], parse_split(e.at("split").get<std::string>())});
        }
        for (const auto& e : m.at("texts"))
            s.text_rows_.emplace(std::make_pair(e.at("sample_id").get<std::string>(),
                                                parse_characteristic(e.at("characteristic").get<std::string>())),
                                 claim(e.at("row").get<std::size_t>()));
        for (const auto& e : m.value("templates", nlohmann::json::array())) {
            const int k = e.at("class_id").get<int>();
            if (k < 0 || static_cast<std::size_t>(k) >= s.class_names_.size())
                fail(Errc::CorruptManifest, "template class_id outside class table");
            s.template_rows_.emplace(k, claim(e.at("row").get<std::size_t>()));
        }
        for (std::size_t r = 0; r < count; ++r)
            if (!used[r]) fail(Errc::CorruptManifest, "row " + std::to_string(r) + " is not indexed");
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::CorruptManifest, e.what());
    }
    return s;
}

} // namespace capfuse
