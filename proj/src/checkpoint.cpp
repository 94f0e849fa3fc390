#include "lcco/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lcco/errors.hpp"

namespace lcco {

namespace {
constexpr char kMagic[4] = {'L', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file");
}
}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamRegistry& reg,
                     const std::string& config_json) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint64_t>(config_json.size()));
    os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_pod(os, static_cast<std::uint64_t>(reg.params().size()));
    for (size_t i = 0; i < reg.params().size(); ++i) {
        const std::string& name = reg.names()[i];
        const Tensor& t = reg.params()[i]->value;
        write_pod(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) write_pod(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw DataError("failed writing checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint (bad magic): " + path);
    std::uint32_t version = 0;
    read_pod(is, version);
    if (version != kVersion) throw DataError("unsupported checkpoint version in " + path);

    CheckpointData data;
    std::uint64_t cfg_len = 0;
    read_pod(is, cfg_len);
    data.config_json.resize(cfg_len);
    is.read(data.config_json.data(), static_cast<std::streamsize>(cfg_len));
    std::uint64_t count = 0;
    read_pod(is, count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t name_len = 0;
        read_pod(is, name_len);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t rank = 0;
        read_pod(is, rank);
        std::vector<int> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            std::uint32_t v = 0;
            read_pod(is, v);
            shape[d] = static_cast<int>(v);
        }
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!is) throw DataError("checkpoint: truncated tensor data for " + name);
        data.names.push_back(std::move(name));
        data.tensors.push_back(std::move(t));
    }
    return data;
}

void load_checkpoint_into(const CheckpointData& data, nn::ParamRegistry& reg) {
    for (size_t i = 0; i < reg.params().size(); ++i) {
        const std::string& name = reg.names()[i];
        const Tensor* found = nullptr;
        for (size_t j = 0; j < data.names.size(); ++j)
            if (data.names[j] == name) {
                found = &data.tensors[j];
                break;
            }
        if (!found) throw DataError("checkpoint is missing parameter: " + name);
        if (!found->same_shape(reg.params()[i]->value))
            throw DataError("checkpoint shape mismatch for " + name + ": " + found->shape_str() +
                            " vs " + reg.params()[i]->value.shape_str());
        reg.params()[i]->value = *found;
    }
}

}  // namespace lcco
