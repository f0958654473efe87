#include "acnorm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "acnorm/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace acnorm {

namespace {

constexpr char kMagic[8] = {'A', 'C', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, std::uint32_t(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

} // namespace

std::string Checkpoint::manifest_at(const std::string& key) const {
    auto it = manifest.find(key);
    if (it == manifest.end()) throw DataError("checkpoint manifest missing key: " + key);
    return it->second;
}

std::uint64_t arch_hash(const std::string& canonical) { return fnv1a64(canonical); }

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));

    std::string manifest_text;
    for (const auto& [k, v] : ckpt.manifest) manifest_text += k + "=" + v + "\n";
    write_string(os, manifest_text);

    write_pod<std::uint32_t>(os, std::uint32_t(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        write_string(os, name);
        write_pod<std::uint8_t>(os, 0); // dtype 0 = float64
        write_pod<std::uint32_t>(os, std::uint32_t(tensor.ndim()));
        for (std::size_t d : tensor.shape()) write_pod<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 std::streamsize(tensor.numel() * sizeof(double)));
    }
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path);

    Checkpoint ckpt;
    const std::string manifest_text = read_string(is);
    std::size_t pos = 0;
    while (pos < manifest_text.size()) {
        const std::size_t eol = manifest_text.find('\n', pos);
        const std::string line = manifest_text.substr(pos, eol - pos);
        pos = (eol == std::string::npos) ? manifest_text.size() : eol + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: malformed manifest line");
        ckpt.manifest[line.substr(0, eq)] = line.substr(eq + 1);
    }

    const auto n_tensors = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = read_string(is);
        const auto dtype = read_pod<std::uint8_t>(is);
        if (dtype != 0) throw DataError("checkpoint: unsupported dtype");
        const auto ndim = read_pod<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = std::size_t(read_pod<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated tensor payload");
        ckpt.tensors[name] = std::move(t);
    }
    return ckpt;
}

Checkpoint to_checkpoint(const ModelGraph& model, const std::string& tag) {
    Checkpoint ckpt;
    const std::string canon = model.arch.canonical();
    ckpt.manifest["format_version"] = std::to_string(kCheckpointFormatVersion);
    ckpt.manifest["arch"] = canon;
    ckpt.manifest["arch_hash"] = std::to_string(arch_hash(canon));
    ckpt.manifest["seed"] = std::to_string(model.init_seed);
    ckpt.manifest["norm_kind"] = to_string(model.norm_kind);
    if (!tag.empty()) ckpt.manifest["tag"] = tag;
    ckpt.tensors = model.params;
    return ckpt;
}

ArchSpec arch_from_checkpoint(const Checkpoint& ckpt) {
    return ArchSpec::from_canonical(ckpt.manifest_at("arch"));
}

ModelGraph model_from_checkpoint(const Checkpoint& ckpt) {
    const ArchSpec arch = arch_from_checkpoint(ckpt);
    const NormKind kind = norm_kind_from_string(ckpt.manifest_at("norm_kind"));
    const std::uint64_t seed = std::stoull(ckpt.manifest_at("seed"));
    ModelGraph model = build_model(arch, seed, kind);
    for (auto& [name, tensor] : model.params) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end())
            throw SurgeryError("checkpoint missing tensor: " + name);
        if (it->second.shape() != tensor.shape())
            throw SurgeryError("checkpoint shape mismatch for: " + name);
        tensor = it->second;
    }
    return model;
}

} // namespace acnorm
