#include "ct/model/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "ct/common/errors.hpp"
#include "ct/common/io.hpp"

namespace ct::model {
namespace {

constexpr char kMagic[4] = {'C', 'T', 'X', 'F'};

template <typename T>
T to_little_endian(T value) {
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        std::reverse(buf, buf + sizeof(T));
        std::memcpy(&value, buf, sizeof(T));
    }
    return value;
}

template <typename T>
void put(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    value = to_little_endian(value);
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        value = to_little_endian(value);
        return value;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CorruptCheckpoint("unexpected end of file");
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const EncoderParams& params, const EncoderConfig& cfg,
                                 const nlohmann::json& metadata) {
    nlohmann::json header = cfg.to_json();
    header["tensor_count"] = params.size();
    header["metadata"] = metadata;
    const std::string json = header.dump();

    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(json.size()));
    out += json;
    for (const auto& t : params.tensors()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank));
        if (t.rank == 1) {
            put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
        } else {
            put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
            put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
        }
        for (Eigen::Index i = 0; i < t.value.size(); ++i) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(t.value.data()[i]));
    }
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptCheckpoint("bad magic");
    in.take(4);
    auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionMismatch("file version " + std::to_string(version) + ", reader supports " +
                              std::to_string(kCheckpointVersion));
    auto json_len = in.get<std::uint32_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.take(json_len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint(std::string("header: ") + e.what());
    }
    Checkpoint ck;
    try {
        ck.config = EncoderConfig::from_json(header);
    } catch (const InvalidConfig& e) {
        throw CorruptCheckpoint(e.what());
    }
    if (header.contains("metadata")) ck.metadata = header["metadata"];
    if (!header.contains("tensor_count") || !header["tensor_count"].is_number_unsigned())
        throw CorruptCheckpoint("header lacks tensor_count");
    const auto count = header["tensor_count"].get<std::uint64_t>();

    for (std::uint64_t t = 0; t < count; ++t) {
        auto name_len = in.get<std::uint32_t>();
        std::string name(in.take(name_len));
        auto rank = in.get<std::uint8_t>();
        if (rank != 1 && rank != 2) throw CorruptCheckpoint("tensor " + name + " has rank " + std::to_string(rank));
        std::uint64_t rows = 1, cols;
        if (rank == 1) {
            cols = in.get<std::uint64_t>();
        } else {
            rows = in.get<std::uint64_t>();
            cols = in.get<std::uint64_t>();
        }
        if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (std::uint64_t{1} << 32))
            throw CorruptCheckpoint("implausible shape for " + name);
        if (ck.params.contains(name)) throw CorruptCheckpoint("duplicate tensor " + name);
        auto& m = ck.params.add(name, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), rank);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(in.get<std::uint32_t>());
    }
    if (!in.done()) throw CorruptCheckpoint("trailing bytes after last tensor");

    // The encoder tensors must match the config; extra tensors (task heads) may follow.
    auto expected = make_param_layout<float>(ck.config);
    for (const auto& e : expected.tensors()) {
        if (!ck.params.contains(e.name)) throw CorruptCheckpoint("missing tensor " + e.name);
        const auto& got = ck.params[e.name];
        if (got.rows() != e.value.rows() || got.cols() != e.value.cols())
            throw CorruptCheckpoint("tensor " + e.name + " has the wrong shape for the config");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params, const EncoderConfig& cfg,
                     const nlohmann::json& metadata) {
    io::write_file_atomic(path, serialize_checkpoint(params, cfg, metadata));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(io::read_file(path));
}

}  // namespace ct::model
