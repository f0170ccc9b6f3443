#include "prm/dataio.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "prm/errors.hpp"

namespace prm {

Batch Dataset::make_batch(const std::size_t* idx, std::size_t n) const {
    const std::size_t s = image_numel();
    Tensor images({n, channels, height, width});
    Batch b;
    b.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t k = idx[i];
        if (k >= size()) throw DataError("batch index out of range");
        const std::uint8_t* src = pixels.data() + k * s;
        double* dst = images.data.data() + i * s;
        for (std::size_t j = 0; j < s; ++j) dst[j] = static_cast<double>(src[j]) / 255.0;
        b.labels[i] = labels[k];
    }
    b.images = std::move(images);
    return b;
}

Batch Dataset::batch_range(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw DataError("bad batch range");
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    return make_batch(idx.data(), idx.size());
}

// ---- raw file helpers ----

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open '" + path + "'");
    f.seekg(0, std::ios::end);
    auto len = f.tellg();
    if (len < 0) throw DataError("cannot read '" + path + "'");
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) throw DataError("cannot read '" + path + "'");
    return buf;
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
           std::uint32_t{p[3]};
}

}  // namespace

// ---- MNIST (IDX) ----

Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
    auto img = read_file(images_path);
    auto lab = read_file(labels_path);

    if (img.size() < 16) throw FormatError("'" + images_path + "': truncated IDX header");
    if (lab.size() < 8) throw FormatError("'" + labels_path + "': truncated IDX header");

    std::uint32_t img_magic = be32(img.data());
    std::uint32_t lab_magic = be32(lab.data());
    if (img_magic != 0x00000803)
        throw FormatError("'" + images_path + "': bad IDX magic " + std::to_string(img_magic) +
                          " at byte 0, want 2051");
    if (lab_magic != 0x00000801)
        throw FormatError("'" + labels_path + "': bad IDX magic " + std::to_string(lab_magic) +
                          " at byte 0, want 2049");

    std::size_t n = be32(img.data() + 4);
    std::size_t rows = be32(img.data() + 8);
    std::size_t cols = be32(img.data() + 12);
    std::size_t n_lab = be32(lab.data() + 4);
    if (n != n_lab)
        throw FormatError("image/label count mismatch: " + std::to_string(n) + " vs " +
                          std::to_string(n_lab));
    if (rows == 0 || cols == 0) throw FormatError("'" + images_path + "': zero image dims");
    if (img.size() != 16 + n * rows * cols)
        throw FormatError("'" + images_path + "': size does not match header");
    if (lab.size() != 8 + n) throw FormatError("'" + labels_path + "': size does not match header");

    Dataset ds;
    ds.channels = 1;
    ds.height = rows;
    ds.width = cols;
    ds.pixels.assign(img.begin() + 16, img.end());
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t v = lab[8 + i];
        if (v > 9)
            throw FormatError("'" + labels_path + "': label " + std::to_string(int(v)) +
                              " at record " + std::to_string(i));
        ds.labels[i] = v;
    }
    return ds;
}

Dataset load_mnist_dir(const std::string& dir, bool train) {
    namespace fs = std::filesystem;
    const char* img_name = train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const char* lab_name = train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    return load_mnist((fs::path(dir) / img_name).string(), (fs::path(dir) / lab_name).string());
}

// ---- CIFAR-10 binary ----

Dataset load_cifar10(const std::vector<std::string>& bin_paths) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    Dataset ds;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    for (const auto& path : bin_paths) {
        auto buf = read_file(path);
        if (buf.empty() || buf.size() % kRecord != 0)
            throw FormatError("'" + path + "': size " + std::to_string(buf.size()) +
                              " is not a multiple of " + std::to_string(kRecord));
        std::size_t n = buf.size() / kRecord;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint8_t* rec = buf.data() + i * kRecord;
            if (rec[0] > 9)
                throw FormatError("'" + path + "': label " + std::to_string(int(rec[0])) +
                                  " at record " + std::to_string(i));
            ds.labels.push_back(rec[0]);
            ds.pixels.insert(ds.pixels.end(), rec + 1, rec + kRecord);
        }
    }
    if (ds.labels.empty()) throw DataError("no CIFAR-10 files given");
    return ds;
}

// ---- checkpoint container ----

namespace {

constexpr char kMagic[4] = {'P', 'R', 'M', 'C'};
constexpr std::uint16_t kVersion = 1;

enum SectionId : std::uint8_t {
    kTopology = 1,
    kTensors = 2,
    kAdmm = 3,
    kMask = 4,
    kPurifyLog = 5,
    kConfig = 6,
    kBaseline = 7,
};

struct Writer {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str16(const std::string& s) {
        if (s.size() > 0xffff) throw FormatError("string too long for checkpoint");
        u16(static_cast<std::uint16_t>(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void tensor(const Tensor& t) {
        u8(1);  // dtype code: 0 = f32, 1 = f64
        u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.dims) {
            if (d > 0xffffffffULL) throw FormatError("tensor dimension too large for checkpoint");
            u32(static_cast<std::uint32_t>(d));
        }
        raw(t.data.data(), t.data.size() * sizeof(double));
    }
};

struct Reader {
    const std::uint8_t* p;
    std::size_t pos = 0;
    std::size_t limit;
    std::string what;

    Reader(const std::uint8_t* data, std::size_t n, std::string label)
        : p(data), limit(n), what(std::move(label)) {}

    void need(std::size_t n) const {
        if (n > limit - pos) throw FormatError(what + ": truncated (at byte " + std::to_string(pos) + ")");
    }
    bool done() const { return pos == limit; }
    std::uint8_t u8() {
        need(1);
        return p[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[pos + i]} << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[pos + i]} << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str16() {
        std::size_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(p + pos), n);
        pos += n;
        return s;
    }
    Tensor tensor() {
        std::uint8_t dtype = u8();
        if (dtype > 1) throw FormatError(what + ": unknown tensor dtype " + std::to_string(dtype));
        std::size_t rank = u8();
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = u32();
        std::size_t n = checked_numel(dims);
        std::vector<double> data(n);
        if (dtype == 1) {
            need(n * 8);
            std::memcpy(data.data(), p + pos, n * 8);
            pos += n * 8;
        } else {
            need(n * 4);
            for (std::size_t i = 0; i < n; ++i) {
                float f;
                std::memcpy(&f, p + pos + i * 4, 4);
                data[i] = f;
            }
            pos += n * 4;
        }
        return Tensor(std::move(dims), std::move(data));
    }
};

std::vector<std::uint8_t> encode_topology(const LayerGraph& g) {
    Writer w;
    w.u64(g.nodes.size());
    for (const auto& nd : g.nodes) {
        w.str16(nd.name);
        w.u8(static_cast<std::uint8_t>(nd.kind));
        w.u8(static_cast<std::uint8_t>(nd.inputs.size()));
        for (int src : nd.inputs) w.u32(static_cast<std::uint32_t>(src));
    }
    w.u8(static_cast<std::uint8_t>(g.input_dims.size()));
    for (std::size_t d : g.input_dims) w.u64(d);
    w.u64(g.num_classes);
    return std::move(w.buf);
}

LayerGraph decode_topology(Reader& r) {
    LayerGraph g;
    std::size_t n = r.u64();
    if (n > 10000) throw FormatError(r.what + ": implausible node count");
    g.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        LayerNode& nd = g.nodes[i];
        nd.name = r.str16();
        std::uint8_t kind = r.u8();
        if (kind > static_cast<std::uint8_t>(LayerKind::Output))
            throw FormatError(r.what + ": unknown layer kind " + std::to_string(kind));
        nd.kind = static_cast<LayerKind>(kind);
        std::size_t nin = r.u8();
        for (std::size_t k = 0; k < nin; ++k) {
            auto src = static_cast<int>(r.u32());
            if (src < 0 || static_cast<std::size_t>(src) >= i)
                throw FormatError(r.what + ": node '" + nd.name + "' input out of order");
            nd.inputs.push_back(src);
            g.nodes[static_cast<std::size_t>(src)].outputs.push_back(static_cast<int>(i));
        }
    }
    std::size_t rank = r.u8();
    g.input_dims.resize(rank);
    for (auto& d : g.input_dims) d = r.u64();
    g.num_classes = r.u64();
    return g;
}

}  // namespace

void save_checkpoint(const std::string& path, const LayerGraph& graph,
                     const CheckpointExtras& extras) {
    graph.validate();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + path + "' for writing");
    auto section = [&](std::uint8_t id, const std::vector<std::uint8_t>& payload) {
        Writer hdr;
        hdr.u8(id);
        hdr.u64(payload.size());
        f.write(reinterpret_cast<const char*>(hdr.buf.data()),
                static_cast<std::streamsize>(hdr.buf.size()));
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
    };

    f.write(kMagic, 4);
    Writer ver;
    ver.u16(kVersion);
    f.write(reinterpret_cast<const char*>(ver.buf.data()), 2);

    section(kTopology, encode_topology(graph));

    {
        Writer w;
        std::vector<int> ids = graph.weighted_ids();
        w.u64(ids.size() * 2);
        for (int id : ids) {
            const LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
            w.str16(nd.name + ".w");
            w.tensor(nd.weights);
            w.str16(nd.name + ".b");
            w.tensor(nd.bias);
        }
        section(kTensors, w.buf);
    }

    if (!extras.admm.empty()) {
        Writer w;
        w.f64(extras.admm.rho);
        w.u64(extras.admm.iterations_done);
        w.u64(extras.admm.budgets.size());
        for (const auto& [name, kept] : extras.admm.budgets) {
            w.str16(name);
            w.u64(kept[0]);
            w.u64(kept[1]);
        }
        w.u64(extras.admm.y.size());
        for (const auto& [name, y] : extras.admm.y) {
            auto uit = extras.admm.u.find(name);
            if (uit == extras.admm.u.end())
                throw DataError("admm state for '" + name + "' missing dual tensor");
            w.str16(name);
            w.tensor(y);
            w.tensor(uit->second);
        }
        section(kAdmm, w.buf);
    }

    if (!extras.mask.empty()) {
        Writer w;
        w.u64(extras.mask.size());
        for (const auto& [name, bits] : extras.mask) {
            w.str16(name);
            w.u64(bits.size());
            w.raw(bits.data(), bits.size());
        }
        section(kMask, w.buf);
    }

    if (!extras.purify_log.empty()) {
        Writer w;
        w.u64(extras.purify_log.size());
        for (const auto& line : extras.purify_log) {
            w.u32(static_cast<std::uint32_t>(line.size()));
            w.raw(line.data(), line.size());
        }
        section(kPurifyLog, w.buf);
    }

    if (!extras.config_echo.empty()) {
        Writer w;
        w.raw(extras.config_echo.data(), extras.config_echo.size());
        section(kConfig, w.buf);
    }

    if (!extras.baseline_counts.empty()) {
        Writer w;
        w.u64(extras.baseline_counts.size());
        for (const auto& [name, count] : extras.baseline_counts) {
            w.str16(name);
            w.u64(count);
        }
        section(kBaseline, w.buf);
    }

    f.flush();
    if (!f) throw DataError("write to '" + path + "' failed");
}

LayerGraph load_checkpoint(const std::string& path, CheckpointExtras* extras) {
    auto buf = read_file(path);
    Reader top(buf.data(), buf.size(), "'" + path + "'");

    top.need(6);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("'" + path + "': not a checkpoint (bad magic)");
    top.pos = 4;
    std::uint16_t version = top.u16();
    if (version != kVersion)
        throw FormatError("'" + path + "': unsupported checkpoint version " +
                          std::to_string(version));

    LayerGraph g;
    bool have_topology = false;
    bool have_tensors = false;

    while (!top.done()) {
        std::uint8_t id = top.u8();
        std::uint64_t len = top.u64();
        top.need(len);
        Reader r(buf.data() + top.pos, static_cast<std::size_t>(len),
                 "'" + path + "' section " + std::to_string(id));
        top.pos += len;

        switch (id) {
            case kTopology:
                g = decode_topology(r);
                have_topology = true;
                break;
            case kTensors: {
                if (!have_topology) throw FormatError("'" + path + "': tensors before topology");
                std::size_t n = r.u64();
                for (std::size_t i = 0; i < n; ++i) {
                    std::string name = r.str16();
                    Tensor t = r.tensor();
                    auto dot = name.rfind('.');
                    if (dot == std::string::npos || dot + 2 != name.size())
                        throw FormatError("'" + path + "': bad tensor name '" + name + "'");
                    std::string layer = name.substr(0, dot);
                    char which = name[dot + 1];
                    int lid = g.node_id(layer);
                    if (lid < 0 || !g.nodes[static_cast<std::size_t>(lid)].weighted())
                        throw FormatError("'" + path + "': tensor for unknown layer '" + layer + "'");
                    if (which == 'w')
                        g.nodes[static_cast<std::size_t>(lid)].weights = std::move(t);
                    else if (which == 'b')
                        g.nodes[static_cast<std::size_t>(lid)].bias = std::move(t);
                    else
                        throw FormatError("'" + path + "': bad tensor name '" + name + "'");
                }
                have_tensors = true;
                break;
            }
            case kAdmm: {
                AdmmSection admm;
                admm.rho = r.f64();
                admm.iterations_done = r.u64();
                std::size_t nb = r.u64();
                for (std::size_t i = 0; i < nb; ++i) {
                    std::string name = r.str16();
                    std::uint64_t kf = r.u64();
                    std::uint64_t kc = r.u64();
                    admm.budgets[name] = {kf, kc};
                }
                std::size_t n = r.u64();
                for (std::size_t i = 0; i < n; ++i) {
                    std::string name = r.str16();
                    admm.y[name] = r.tensor();
                    admm.u[name] = r.tensor();
                }
                if (extras) extras->admm = std::move(admm);
                break;
            }
            case kMask: {
                WeightMask mask;
                std::size_t n = r.u64();
                for (std::size_t i = 0; i < n; ++i) {
                    std::string name = r.str16();
                    std::size_t bytes = r.u64();
                    r.need(bytes);
                    mask[name].assign(r.p + r.pos, r.p + r.pos + bytes);
                    r.pos += bytes;
                }
                if (extras) extras->mask = std::move(mask);
                break;
            }
            case kPurifyLog: {
                std::vector<std::string> lines;
                std::size_t n = r.u64();
                for (std::size_t i = 0; i < n; ++i) {
                    std::size_t len2 = r.u32();
                    r.need(len2);
                    lines.emplace_back(reinterpret_cast<const char*>(r.p + r.pos), len2);
                    r.pos += len2;
                }
                if (extras) extras->purify_log = std::move(lines);
                break;
            }
            case kConfig:
                if (extras)
                    extras->config_echo.assign(reinterpret_cast<const char*>(r.p), r.limit);
                break;
            case kBaseline: {
                std::map<std::string, std::size_t> counts;
                std::size_t n = r.u64();
                for (std::size_t i = 0; i < n; ++i) {
                    std::string name = r.str16();
                    counts[name] = r.u64();
                }
                if (extras) extras->baseline_counts = std::move(counts);
                break;
            }
            default:
                std::cerr << "warning: '" << path << "': skipping unknown checkpoint section id="
                          << int(id) << " (" << len << " bytes)\n";
                break;
        }
    }

    if (!have_topology) throw FormatError("'" + path + "': missing topology section");
    if (!have_tensors) throw FormatError("'" + path + "': missing tensor section");
    for (const auto& nd : g.nodes)
        if (nd.weighted() && nd.weights.empty())
            throw FormatError("'" + path + "': missing tensors for layer '" + nd.name + "'");

    // Mask entries must match the tensors they gate.
    if (extras) {
        for (const auto& [name, bits] : extras->mask) {
            int lid = g.node_id(name);
            if (lid < 0 || !g.nodes[static_cast<std::size_t>(lid)].weighted())
                throw FormatError("'" + path + "': mask for unknown layer '" + name + "'");
            if (bits.size() != g.nodes[static_cast<std::size_t>(lid)].weights.numel())
                throw FormatError("'" + path + "': mask size mismatch for layer '" + name + "'");
        }
    }

    g.validate();
    return g;
}

}  // namespace prm
