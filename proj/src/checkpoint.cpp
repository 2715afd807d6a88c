#include "stitchformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "stitchformer/digest.hpp"
#include "stitchformer/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace stitchformer {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class Reader {
  public:
    Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > bytes_.size()) fail();
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string get_str() {
        const std::uint32_t n = get<std::uint32_t>();
        if (pos_ + n > bytes_.size()) fail();
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::string_view view(std::size_t n) {
        if (pos_ + n > bytes_.size()) fail();
        std::string_view v(bytes_.data() + pos_, n);
        pos_ += n;
        return v;
    }

    [[noreturn]] void fail() const {
        throw CorruptionError("checkpoint " + path_ + ": truncated file");
    }

  private:
    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

struct ManifestEntry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset;
    std::uint64_t count;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params,
                     const std::map<std::string, std::string>& meta) {
    const Precision prec = global_precision();
    const std::size_t elem = prec == Precision::kF32 ? 4 : 8;

    std::string blobs;
    std::string header;
    header.append(kMagic, sizeof(kMagic));
    put<std::uint32_t>(header, kVersion);
    put<std::uint8_t>(header, prec == Precision::kF32 ? 0 : 1);
    put<std::uint32_t>(header, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [key, value] : meta) {
        put_str(header, key);
        put_str(header, value);
    }
    put<std::uint32_t>(header, static_cast<std::uint32_t>(params.size()));
    for (const NamedParam& p : params) {
        put_str(header, p.name);
        put<std::uint8_t>(header, static_cast<std::uint8_t>(p.tensor.shape().size()));
        for (int d : p.tensor.shape()) put<std::uint32_t>(header, static_cast<std::uint32_t>(d));
        put<std::uint64_t>(header, static_cast<std::uint64_t>(blobs.size()));
        put<std::uint64_t>(header, static_cast<std::uint64_t>(p.tensor.size()));
        for (double v : p.tensor.values()) {
            if (prec == Precision::kF32) {
                put<float>(blobs, static_cast<float>(v));
            } else {
                put<double>(blobs, v);
            }
        }
    }
    put<std::uint64_t>(header, static_cast<std::uint64_t>(blobs.size()));
    const std::string digest = sha256_hex(blobs);
    put_str(header, digest);
    (void)elem;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint " + path + ": cannot open for writing");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
    if (!out) throw FormatError("checkpoint " + path + ": write failed");
}

namespace {

CheckpointLoadResult read_checkpoint(const std::string& path, std::vector<NamedParam>* params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint " + path + ": cannot open");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(bytes, path);

    char magic[8];
    for (char& c : magic) c = r.get<char>();
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint " + path + ": bad magic");
    }
    const std::uint32_t version = r.get<std::uint32_t>();
    if (version != kVersion) {
        throw FormatError("checkpoint " + path + ": unsupported format version " +
                          std::to_string(version));
    }
    const std::uint8_t prec_flag = r.get<std::uint8_t>();
    if (prec_flag > 1) throw FormatError("checkpoint " + path + ": bad precision flag");
    const Precision stored = prec_flag == 0 ? Precision::kF32 : Precision::kF64;

    CheckpointLoadResult result;
    result.stored_precision = stored;
    const std::uint32_t n_meta = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string key = r.get_str();
        std::string value = r.get_str();
        result.meta.emplace(std::move(key), std::move(value));
    }

    const std::uint32_t n_entries = r.get<std::uint32_t>();
    std::vector<ManifestEntry> entries(n_entries);
    for (ManifestEntry& e : entries) {
        e.name = r.get_str();
        const std::uint8_t ndim = r.get<std::uint8_t>();
        e.shape.resize(ndim);
        for (int& d : e.shape) d = static_cast<int>(r.get<std::uint32_t>());
        e.offset = r.get<std::uint64_t>();
        e.count = r.get<std::uint64_t>();
    }
    const std::uint64_t blob_bytes = r.get<std::uint64_t>();
    const std::string digest = r.get_str();
    std::string_view blobs = r.view(blob_bytes);
    if (sha256_hex(blobs.data(), blobs.size()) != digest) {
        throw CorruptionError("checkpoint " + path + ": value digest mismatch");
    }

    if (params == nullptr) return result;

    const std::size_t elem = stored == Precision::kF32 ? 4 : 8;
    if (stored != global_precision()) {
        result.precision_note = std::string("values converted from ") +
                                (stored == Precision::kF32 ? "f32" : "f64") + " to " +
                                (global_precision() == Precision::kF32 ? "f32" : "f64") +
                                " on load";
    }

    for (NamedParam& target : *params) {
        const ManifestEntry* found = nullptr;
        for (const ManifestEntry& e : entries) {
            if (e.name == target.name) {
                found = &e;
                break;
            }
        }
        if (found == nullptr) {
            throw ContractError("checkpoint " + path + ": missing entry '" + target.name + "'");
        }
        if (found->shape != target.tensor.shape()) {
            throw ContractError("checkpoint " + path + ": entry '" + target.name + "' has shape " +
                                shape_str(found->shape) + ", expected " +
                                shape_str(target.tensor.shape()));
        }
        if (found->offset + found->count * elem > blobs.size()) {
            throw CorruptionError("checkpoint " + path + ": entry '" + target.name +
                                  "' extends past blob section");
        }
        std::vector<double>& dst = target.tensor.values();
        for (std::uint64_t i = 0; i < found->count; ++i) {
            const char* src = blobs.data() + found->offset + i * elem;
            double v;
            if (stored == Precision::kF32) {
                float f;
                std::memcpy(&f, src, 4);
                v = static_cast<double>(f);
            } else {
                std::memcpy(&v, src, 8);
            }
            dst[i] = round_to_precision(v);
        }
    }
    return result;
}

}  // namespace

CheckpointLoadResult load_checkpoint(const std::string& path, std::vector<NamedParam>& params) {
    return read_checkpoint(path, &params);
}

CheckpointLoadResult peek_checkpoint(const std::string& path) {
    return read_checkpoint(path, nullptr);
}

}  // namespace stitchformer
