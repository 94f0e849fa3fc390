#include "lcco/clip_provider.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "lcco/config.hpp"
#include "lcco/errors.hpp"
#include "lcco/imageops.hpp"

namespace lcco::clip {

PromptBank PromptBank::make(std::vector<std::string> vocabulary, std::string tmpl) {
    PromptBank bank;
    bank.vocabulary = std::move(vocabulary);
    bank.tmpl = std::move(tmpl);
    std::set<std::string> seen;
    for (const auto& cls : bank.vocabulary) {
        std::string prompt = render_prompt(bank.tmpl, cls);
        if (!seen.insert(prompt).second)
            throw ConfigError("duplicate rendered prompt: " + prompt);
        bank.rendered.push_back(std::move(prompt));
    }
    if (bank.rendered.empty()) throw ConfigError("prompt bank is empty");
    return bank;
}

namespace {
void check_unit_rows(const Tensor& m, const char* what, double tol) {
    for (int i = 0; i < m.dim(0); ++i) {
        double norm = 0.0;
        for (int j = 0; j < m.dim(1); ++j) norm += m.at2(i, j) * m.at2(i, j);
        norm = std::sqrt(norm);
        if (std::fabs(norm - 1.0) > tol)
            throw DataError(std::string(what) + " row " + std::to_string(i) +
                            " is not unit-norm (|v| = " + std::to_string(norm) + ")");
    }
}
}  // namespace

void validate_bundle(const ClipBundle& b) {
    if (b.h_img.rank() != 2 || b.h_txt.rank() != 2 || b.h_img.dim(1) != b.d ||
        b.h_txt.dim(1) != b.d)
        throw DataError("clip bundle: embedding width mismatch");
    check_unit_rows(b.h_img, "h_img", 1e-5);
    check_unit_rows(b.h_txt, "h_txt", 1e-5);
    int n = b.h_img.dim(0), p = b.h_txt.dim(0);
    if (b.s.rank() != 2 || b.s.dim(0) != n || b.s.dim(1) != p)
        throw DataError("clip bundle: similarity matrix shape mismatch");
    for (long long i = 0; i < b.s.size(); ++i)
        if (b.s[i] < -1.0 - 1e-9 || b.s[i] > 1.0 + 1e-9)
            throw DataError("clip bundle: similarity outside [-1,1]");
    if (b.sigma.rank() != 1 || b.sigma.dim(0) != p)
        throw DataError("clip bundle: sigma shape mismatch");
    for (int j = 0; j < p; ++j) {
        double col = 0.0;
        for (int i = 0; i < n; ++i) col += b.s.at2(i, j);
        if (std::fabs(col - b.sigma[j]) > 1e-6)
            throw DataError("clip bundle: sigma inconsistent with s at column " +
                            std::to_string(j));
    }
}

ClipBundle similarity(const Tensor& h_img, const Tensor& h_txt) {
    if (h_img.rank() != 2 || h_txt.rank() != 2)
        throw std::invalid_argument("similarity: expected 2-D embedding matrices");
    if (h_img.dim(1) != h_txt.dim(1))
        throw std::invalid_argument("similarity: embedding width mismatch: " +
                                    h_img.shape_str() + " vs " + h_txt.shape_str());
    check_unit_rows(h_img, "h_img", 1e-5);
    check_unit_rows(h_txt, "h_txt", 1e-5);

    int n = h_img.dim(0), p = h_txt.dim(0), d = h_img.dim(1);
    ClipBundle b;
    b.d = d;
    b.h_img = h_img;
    b.h_txt = h_txt;
    b.s = Tensor({n, p});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) {
            double dot = 0.0;
            for (int k = 0; k < d; ++k) dot += h_img.at2(i, k) * h_txt.at2(j, k);
            b.s.at2(i, j) = dot;
        }
    b.sigma = Tensor({p});
    for (int j = 0; j < p; ++j) {
        double col = 0.0;
        for (int i = 0; i < n; ++i) col += b.s.at2(i, j);
        b.sigma[j] = col;
    }
    return b;
}

// ---------------- FixtureStore ----------------

void FixtureStore::insert_image(std::uint64_t content_hash, std::vector<double> embedding) {
    if (static_cast<int>(embedding.size()) != width_)
        throw DataError("fixture store: embedding width mismatch");
    images_[content_hash] = std::move(embedding);
}

void FixtureStore::insert_prompt(const std::string& prompt, std::vector<double> embedding) {
    if (static_cast<int>(embedding.size()) != width_)
        throw DataError("fixture store: embedding width mismatch");
    prompts_[prompt] = std::move(embedding);
}

const std::vector<double>* FixtureStore::find_image(std::uint64_t content_hash) const {
    auto it = images_.find(content_hash);
    return it == images_.end() ? nullptr : &it->second;
}

const std::vector<double>* FixtureStore::find_prompt(const std::string& prompt) const {
    auto it = prompts_.find(prompt);
    return it == prompts_.end() ? nullptr : &it->second;
}

namespace {
constexpr char kStoreMagic[4] = {'L', 'C', 'F', 'X'};
constexpr std::uint32_t kStoreVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("fixture store: truncated file");
}

void check_unit(const std::vector<double>& v, const std::string& what) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (std::fabs(std::sqrt(norm) - 1.0) > 1e-5)
        throw DataError("fixture store: " + what + " is not unit-norm");
}
}  // namespace

void FixtureStore::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write fixture store: " + path);
    os.write(kStoreMagic, 4);
    write_pod(os, kStoreVersion);
    write_pod(os, static_cast<std::uint32_t>(width_));
    write_pod(os, static_cast<std::uint64_t>(images_.size()));
    write_pod(os, static_cast<std::uint64_t>(prompts_.size()));
    // Image entries sorted by hash for byte-stable output.
    std::vector<std::uint64_t> keys;
    keys.reserve(images_.size());
    for (const auto& [k, v] : images_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (std::uint64_t k : keys) {
        write_pod(os, k);
        const auto& v = images_.at(k);
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    for (const auto& [prompt, v] : prompts_) {
        write_pod(os, static_cast<std::uint32_t>(prompt.size()));
        os.write(prompt.data(), static_cast<std::streamsize>(prompt.size()));
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) throw DataError("failed writing fixture store: " + path);
}

FixtureStore FixtureStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open fixture store: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kStoreMagic, 4) != 0)
        throw DataError("not a fixture store (bad magic): " + path);
    std::uint32_t version = 0, width = 0;
    read_pod(is, version);
    if (version != kStoreVersion)
        throw DataError("unsupported fixture store version in " + path);
    read_pod(is, width);
    std::uint64_t n_images = 0, n_prompts = 0;
    read_pod(is, n_images);
    read_pod(is, n_prompts);

    FixtureStore store(static_cast<int>(width));
    for (std::uint64_t i = 0; i < n_images; ++i) {
        std::uint64_t key = 0;
        read_pod(is, key);
        std::vector<double> v(width);
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!is) throw DataError("fixture store: truncated image entry");
        check_unit(v, "image embedding");
        store.images_[key] = std::move(v);
    }
    for (std::uint64_t i = 0; i < n_prompts; ++i) {
        std::uint32_t len = 0;
        read_pod(is, len);
        std::string prompt(len, '\0');
        is.read(prompt.data(), len);
        std::vector<double> v(width);
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!is) throw DataError("fixture store: truncated prompt entry");
        check_unit(v, "prompt embedding");
        store.prompts_[prompt] = std::move(v);
    }
    return store;
}

std::uint64_t FixtureStore::content_checksum() const {
    std::uint64_t h = fnv1a64(&width_, sizeof(width_));
    std::vector<std::uint64_t> keys;
    for (const auto& [k, v] : images_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (std::uint64_t k : keys) {
        h = fnv1a64(&k, sizeof(k), h);
        const auto& v = images_.at(k);
        h = fnv1a64(v.data(), v.size() * sizeof(double), h);
    }
    for (const auto& [prompt, v] : prompts_) {
        h = fnv1a64_str(prompt, h);
        h = fnv1a64(v.data(), v.size() * sizeof(double), h);
    }
    return h;
}

// ---------------- embedding synthesis ----------------

std::uint64_t image_content_hash(const Tensor& img) {
    auto bytes = imageops::to_bytes(img);
    std::uint64_t h = fnv1a64(bytes.data(), bytes.size());
    for (int d : img.shape()) {
        std::uint32_t v = static_cast<std::uint32_t>(d);
        h = fnv1a64(&v, sizeof(v), h);
    }
    return h;
}

namespace {
std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_open(std::uint64_t bits) {
    // (0,1): top 53 bits, offset by half an ulp so log() never sees 0.
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}
}  // namespace

std::vector<double> synthetic_embedding(std::uint64_t seed, int width, std::uint64_t key) {
    std::uint64_t state = seed ^ (key * 0xff51afd7ed558ccdULL);
    std::vector<double> v(static_cast<size_t>(width));
    for (int i = 0; i < width; i += 2) {
        double u1 = unit_open(splitmix64(state));
        double u2 = unit_open(splitmix64(state));
        double r = std::sqrt(-2.0 * std::log(u1));
        v[static_cast<size_t>(i)] = r * std::cos(2.0 * M_PI * u2);
        if (i + 1 < width) v[static_cast<size_t>(i) + 1] = r * std::sin(2.0 * M_PI * u2);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

// ---------------- backends ----------------

FixtureClipBackend::FixtureClipBackend(FixtureStore store, bool strict, std::uint64_t seed)
    : width_(store.width()), seed_(seed), store_(std::move(store)), strict_(strict) {}

std::vector<double> FixtureClipBackend::image_embedding(const Tensor& img) const {
    std::uint64_t key = image_content_hash(img);
    if (const auto* rec = store_.find_image(key)) return *rec;
    if (strict_)
        throw DataError("fixture miss: no recorded embedding for image hash " +
                        std::to_string(key));
    return synthetic_embedding(seed_, width_, key);
}

Tensor FixtureClipBackend::encode_images(const std::vector<Tensor>& images) const {
    if (images.empty()) throw DataError("encode_images: empty image list");
    Tensor out({static_cast<int>(images.size()), width_});
    for (size_t i = 0; i < images.size(); ++i) {
        auto v = image_embedding(images[i]);
        for (int j = 0; j < width_; ++j) out.at2(static_cast<int>(i), j) = v[static_cast<size_t>(j)];
    }
    return out;
}

Tensor FixtureClipBackend::encode_prompts(const PromptBank& bank) const {
    Tensor out({bank.size(), width_});
    for (int i = 0; i < bank.size(); ++i) {
        const std::string& prompt = bank.rendered[static_cast<size_t>(i)];
        std::vector<double> v;
        if (const auto* rec = store_.find_prompt(prompt)) {
            v = *rec;
        } else if (strict_) {
            throw DataError("fixture miss: no recorded embedding for prompt '" + prompt + "'");
        } else {
            v = synthetic_embedding(seed_, width_, fnv1a64_str(prompt));
        }
        for (int j = 0; j < width_; ++j) out.at2(i, j) = v[static_cast<size_t>(j)];
    }
    return out;
}

std::uint64_t FixtureClipBackend::parameter_checksum() const {
    std::uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(&width_, sizeof(width_), h);
    std::uint64_t sc = store_.content_checksum();
    return fnv1a64(&sc, sizeof(sc), h);
}

RecordedClipBackend::RecordedClipBackend(const std::string& store_path)
    : store_(FixtureStore::load(store_path)) {
    checksum_ = store_.content_checksum();
}

Tensor RecordedClipBackend::encode_images(const std::vector<Tensor>& images) const {
    if (images.empty()) throw DataError("encode_images: empty image list");
    Tensor out({static_cast<int>(images.size()), store_.width()});
    for (size_t i = 0; i < images.size(); ++i) {
        std::uint64_t key = image_content_hash(images[i]);
        const auto* v = store_.find_image(key);
        if (!v)
            throw DataError("recorded CLIP backend: no embedding for image hash " +
                            std::to_string(key));
        for (int j = 0; j < store_.width(); ++j)
            out.at2(static_cast<int>(i), j) = (*v)[static_cast<size_t>(j)];
    }
    return out;
}

Tensor RecordedClipBackend::encode_prompts(const PromptBank& bank) const {
    Tensor out({bank.size(), store_.width()});
    for (int i = 0; i < bank.size(); ++i) {
        const auto* v = store_.find_prompt(bank.rendered[static_cast<size_t>(i)]);
        if (!v)
            throw DataError("recorded CLIP backend: no embedding for prompt '" +
                            bank.rendered[static_cast<size_t>(i)] + "'");
        for (int j = 0; j < store_.width(); ++j) out.at2(i, j) = (*v)[static_cast<size_t>(j)];
    }
    return out;
}

std::unique_ptr<ClipBackend> make_backend(const std::string& kind, int width, std::uint64_t seed,
                                          const std::string& store_path, bool strict) {
    if (kind == "real") {
        if (store_path.empty())
            throw ConfigError("clip_backend 'real' requires a recorded embedding store");
        return std::make_unique<RecordedClipBackend>(store_path);
    }
    if (kind == "fixture") {
        if (!store_path.empty())
            return std::make_unique<FixtureClipBackend>(FixtureStore::load(store_path), strict,
                                                        seed);
        return std::make_unique<FixtureClipBackend>(width, seed);
    }
    throw ConfigError("unknown clip backend: " + kind);
}

}  // namespace lcco::clip
