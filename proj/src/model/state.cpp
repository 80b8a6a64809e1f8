#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "colearn/model/config_io.hpp"
#include "colearn/model/model.hpp"

namespace colearn::model {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void check_head(const std::vector<std::size_t>& fc, real dropout, const char* who) {
    if (fc.size() != 3) throw std::invalid_argument(std::string(who) + ": fc must list three widths");
    if (fc[0] == 0 || fc[1] == 0 || fc[2] != 1) throw std::invalid_argument(std::string(who) + ": fc widths must be positive and end in 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument(std::string(who) + ": dropout must lie in [0, 1)");
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t fnv_offset = 0xcbf29ce484222325ull;

class initializer {
public:
    initializer(model_state& s, std::uint64_t seed) : s_(s), rng_(seed) {}

    void weight(const std::string& name, ag::shape_t shape, std::size_t fan_in) {
        const float bound = static_cast<float>(std::sqrt(1.0 / static_cast<double>(fan_in)));
        std::uniform_real_distribution<float> u(-bound, bound);
        std::vector<real> v(ag::numel(shape));
        for (auto& x : v) x = u(rng_);
        add(name, std::move(shape), std::move(v));
    }
    void constant(const std::string& name, ag::shape_t shape, real value) {
        const std::size_t n = ag::numel(shape);
        add(name, std::move(shape), std::vector<real>(n, value));
    }
    void add(const std::string& name, ag::shape_t shape, std::vector<real> values) {
        s_.params.push_back({name, ag::tensor::from(std::move(shape), std::move(values), true), {}, {}});
    }
    void norm(const std::string& name, std::size_t channels) {
        constant(name + ".gamma", {channels}, 1.0);
        constant(name + ".beta", {channels}, 0.0);
        s_.norms.push_back({name, ag::running_stats::init(channels)});
    }
    void fc_head(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& fc) {
        for (std::size_t i = 0; i < fc.size(); ++i) {
            const std::string p = prefix + ".fc" + std::to_string(i);
            weight(p + ".weight", {fc[i], in}, in);
            constant(p + ".bias", {fc[i]}, 0.0);
            in = fc[i];
        }
    }
    std::mt19937_64& rng() { return rng_; }

private:
    model_state& s_;
    std::mt19937_64 rng_;
};

} // namespace

void validate(const cnn_config& c) {
    if (c.in_channels == 0) throw std::invalid_argument("cnn: in_channels must be positive");
    if (c.widths.empty() || std::find(c.widths.begin(), c.widths.end(), 0u) != c.widths.end()) {
        throw std::invalid_argument("cnn: widths must be non-empty and positive");
    }
    if (c.kernel == 0 || c.kernel % 2 == 0) throw std::invalid_argument("cnn: kernel must be odd");
    if (c.stride == 0 || c.pool == 0) throw std::invalid_argument("cnn: stride and pool must be positive");
    if (c.crop == 0 || c.crop + 2 * c.padding < c.kernel) throw std::invalid_argument("cnn: crop too small for the kernel");
    check_head(c.fc, c.dropout, "cnn");
    (void)cnn_extents(c);
}

void validate(const gnn_config& c) {
    if (c.radii.empty() || c.radii.size() != c.widths.size()) throw std::invalid_argument("gnn: radii and widths must have the same non-zero length");
    for (std::size_t i = 0; i < c.radii.size(); ++i) {
        if (!(c.radii[i] > 0.0) || (i > 0 && !(c.radii[i] > c.radii[i - 1]))) {
            throw std::invalid_argument("gnn: radii must be positive and strictly increasing");
        }
    }
    if (std::find(c.widths.begin(), c.widths.end(), 0u) != c.widths.end()) throw std::invalid_argument("gnn: widths must be positive");
    if (!(c.ratio > 0.0 && c.ratio <= 1.0)) throw std::invalid_argument("gnn: ratio must lie in (0, 1]");
    if (c.edge_hidden == 0 || c.max_degree == 0) throw std::invalid_argument("gnn: edge_hidden and max_degree must be positive");
    check_head(c.fc, c.dropout, "gnn");
}

std::vector<std::size_t> cnn_extents(const cnn_config& c) {
    std::vector<std::size_t> out;
    std::size_t s = c.crop;
    for (std::size_t l = 0; l < c.widths.size(); ++l) {
        if (s + 2 * c.padding < c.kernel) throw std::invalid_argument("cnn: crop too small for the conv stack");
        s = (s + 2 * c.padding - c.kernel) / c.stride + 1;
        const std::size_t window = std::min(c.pool, s);
        s = (s - window) / window + 1;
        out.push_back(s);
    }
    return out;
}

std::size_t cnn_flat_features(const cnn_config& c) {
    const std::size_t s = cnn_extents(c).back();
    return c.widths.back() * s * s * s;
}

parameter& model_state::find(std::string_view name) {
    for (auto& p : params)
        if (p.name == name) return p;
    throw std::out_of_range("model_state: no parameter named " + std::string(name));
}

const parameter& model_state::find(std::string_view name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    throw std::out_of_range("model_state: no parameter named " + std::string(name));
}

ag::running_stats& model_state::stats(std::string_view name) {
    for (auto& n : norms)
        if (n.name == name) return n.stats;
    throw std::out_of_range("model_state: no batchnorm named " + std::string(name));
}

std::size_t model_state::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

model_state model_state::clone() const {
    model_state out = *this;
    for (auto& p : out.params) {
        ag::tensor copy = p.value.detach();
        copy.set_requires_grad(p.value.requires_grad());
        p.value = copy;
    }
    return out;
}

model_state init_params(const cnn_config& cnn, const gnn_config& gnn, std::uint64_t seed) {
    validate(cnn);
    validate(gnn);
    model_state s;
    s.cnn = cnn;
    s.gnn = gnn;
    s.seed = seed;
    initializer init(s, seed);

    std::size_t in = cnn.in_channels;
    const std::size_t k = cnn.kernel;
    for (std::size_t l = 0; l < cnn.widths.size(); ++l) {
        const std::string p = "cnn.conv" + std::to_string(l);
        init.weight(p + ".weight", {cnn.widths[l], in, k, k, k}, in * k * k * k);
        init.constant(p + ".bias", {cnn.widths[l]}, 0.0);
        init.norm("cnn.bn" + std::to_string(l), cnn.widths[l]);
        in = cnn.widths[l];
    }
    init.fc_head("cnn", cnn_flat_features(cnn), cnn.fc);

    in = 3;
    const std::size_t h = gnn.edge_hidden;
    for (std::size_t l = 0; l < gnn.widths.size(); ++l) {
        const std::string p = "gnn.conv" + std::to_string(l);
        const std::size_t out = gnn.widths[l];
        init.weight(p + ".edge1.weight", {h, 3}, 3);
        init.constant(p + ".edge1.bias", {h}, 0.0);
        init.norm(p + ".edge_bn", h);
        // Second edge layer, stored so that row (k * out + o) maps a neighbour's
        // features to output o through hidden unit k; the last block of rows
        // is that layer's bias and starts at zero.
        {
            std::uniform_real_distribution<float> u(-static_cast<float>(std::sqrt(1.0 / static_cast<double>(h))),
                                                    static_cast<float>(std::sqrt(1.0 / static_cast<double>(h))));
            std::vector<real> v((h + 1) * out * in, 0.0);
            for (std::size_t i = 0; i < h * out * in; ++i) v[i] = u(init.rng());
            init.add(p + ".edge2.weight", {(h + 1) * out, in}, std::move(v));
        }
        init.weight(p + ".root.weight", {out, in}, in);
        init.constant(p + ".root.bias", {out}, 0.0);
        in = out;
    }
    init.fc_head("gnn", in, gnn.fc);
    return s;
}

std::uint64_t parameter_hash(const model_state& s, std::string_view prefix) {
    std::vector<const parameter*> sel;
    for (const auto& p : s.params)
        if (p.name.starts_with(prefix)) sel.push_back(&p);
    std::sort(sel.begin(), sel.end(), [](const auto* a, const auto* b) { return a->name < b->name; });
    std::uint64_t h = fnv_offset;
    for (const auto* p : sel) {
        h = fnv1a(h, p->name.data(), p->name.size());
        const auto d = p->value.data();
        h = fnv1a(h, d.data(), d.size() * sizeof(real));
    }
    return h;
}

// ------------------------------------------------------------ checkpoints

namespace {

struct payload_entry {
    std::string name;
    std::string kind;
    ag::shape_t shape;
    std::vector<real>* values;
};

std::vector<payload_entry> payload_layout(model_state& s) {
    std::vector<payload_entry> out;
    for (auto& p : s.params) {
        auto& impl = *p.value.impl();
        out.push_back({p.name, "param", impl.shape, &impl.data});
        if (!p.m.empty()) out.push_back({p.name, "adam_m", impl.shape, &p.m});
        if (!p.v.empty()) out.push_back({p.name, "adam_v", impl.shape, &p.v});
    }
    for (auto& n : s.norms) {
        out.push_back({n.name, "running_mean", {n.stats.mean.size()}, &n.stats.mean});
        out.push_back({n.name, "running_var", {n.stats.var.size()}, &n.stats.var});
    }
    return out;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace

void save_state(const model_state& state, const fs::path& dir) {
    auto& s = const_cast<model_state&>(state); // layout only reads through the pointers
    const auto layout = payload_layout(s);
    std::vector<float> payload;
    json entries = json::array();
    for (const auto& e : layout) {
        entries.push_back({{"name", e.name}, {"kind", e.kind}, {"shape", e.shape}, {"offset", payload.size()}});
        for (real v : *e.values) {
            const auto f = static_cast<float>(v);
            if (static_cast<real>(f) != v) {
                throw checkpoint_error("save_state: " + e.name + " (" + e.kind + ") is not representable at single precision");
            }
            payload.push_back(f);
        }
    }
    json norms = json::array();
    for (const auto& n : s.norms) norms.push_back({{"name", n.name}, {"momentum", n.stats.momentum}, {"eps", n.stats.eps}});
    const json manifest = {{"format", "colearn-checkpoint"},
                           {"version", checkpoint_version},
                           {"seed", s.seed},
                           {"step", s.step},
                           {"cnn", to_json(s.cnn)},
                           {"gnn", to_json(s.gnn)},
                           {"dtype", "f32-le"},
                           {"tensors", entries},
                           {"norms", norms},
                           {"payload_floats", payload.size()},
                           {"checksum", hex(fnv1a(fnv_offset, payload.data(), payload.size() * sizeof(float)))}};
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        out << manifest.dump(1) << '\n';
        if (!out) throw checkpoint_error("cannot write " + (dir / "manifest.json").string());
    }
    std::ofstream out(dir / "payload.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw checkpoint_error("cannot write " + (dir / "payload.bin").string());
}

model_state load_state(const fs::path& dir) {
    json m;
    {
        std::ifstream in(dir / "manifest.json");
        if (!in) throw checkpoint_error("cannot open " + (dir / "manifest.json").string());
        try {
            m = json::parse(in);
        } catch (const json::exception& e) {
            throw checkpoint_corrupt_error("manifest: " + std::string(e.what()));
        }
    }
    if (!m.is_object() || m.value("format", "") != "colearn-checkpoint") throw checkpoint_corrupt_error("manifest: not a checkpoint");
    if (!m.contains("version") || m["version"] != checkpoint_version) {
        throw checkpoint_version_error("checkpoint version " + (m.contains("version") ? m["version"].dump() : "missing") +
                                       ", expected " + std::to_string(checkpoint_version));
    }
    model_state s;
    try {
        s = init_params(cnn_from_json(m.at("cnn")), gnn_from_json(m.at("gnn")), m.at("seed").get<std::uint64_t>());
        s.step = m.at("step").get<std::size_t>();
    } catch (const std::exception& e) {
        throw checkpoint_corrupt_error("manifest: " + std::string(e.what()));
    }

    std::vector<char> bytes;
    {
        std::ifstream in(dir / "payload.bin", std::ios::binary);
        if (!in) throw checkpoint_error("cannot open " + (dir / "payload.bin").string());
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    std::size_t expected = 0;
    try {
        expected = m.at("payload_floats").get<std::size_t>();
    } catch (const json::exception& e) {
        throw checkpoint_corrupt_error("manifest: " + std::string(e.what()));
    }
    if (bytes.size() < expected * sizeof(float)) {
        throw checkpoint_truncated_error("payload has " + std::to_string(bytes.size()) + " bytes, manifest promises " +
                                         std::to_string(expected * sizeof(float)));
    }
    if (bytes.size() != expected * sizeof(float)) throw checkpoint_corrupt_error("payload longer than the manifest promises");
    if (m.value("checksum", "") != hex(fnv1a(fnv_offset, bytes.data(), bytes.size()))) {
        throw checkpoint_corrupt_error("payload checksum mismatch");
    }
    std::vector<float> payload(expected);
    std::memcpy(payload.data(), bytes.data(), bytes.size());

    try {
        const auto& entries = m.at("tensors");
        std::size_t cursor = 0;
        for (const auto& e : entries) {
            const auto name = e.at("name").get<std::string>();
            const auto kind = e.at("kind").get<std::string>();
            const auto shape = e.at("shape").get<ag::shape_t>();
            const auto offset = e.at("offset").get<std::size_t>();
            const std::size_t n = ag::numel(shape);
            if (offset != cursor || offset + n > payload.size()) throw checkpoint_corrupt_error(name + ": bad offset");
            std::vector<real>* target = nullptr;
            if (kind == "param" || kind == "adam_m" || kind == "adam_v") {
                auto& p = s.find(name);
                if (p.value.shape() != shape) throw checkpoint_corrupt_error(name + ": shape " + ag::shape_str(shape) + " does not match the config");
                if (kind == "param") target = &p.value.impl()->data;
                else target = kind == "adam_m" ? &p.m : &p.v;
            } else if (kind == "running_mean" || kind == "running_var") {
                auto& st = s.stats(name);
                if (shape.size() != 1 || shape[0] != st.mean.size()) throw checkpoint_corrupt_error(name + ": bad stats shape");
                target = kind == "running_mean" ? &st.mean : &st.var;
            } else {
                throw checkpoint_corrupt_error(name + ": unknown tensor kind " + kind);
            }
            target->assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                           payload.begin() + static_cast<std::ptrdiff_t>(offset + n));
            cursor += n;
        }
        if (cursor != payload.size()) throw checkpoint_corrupt_error("payload has unlisted values");
        for (const auto& n : m.at("norms")) {
            auto& st = s.stats(n.at("name").get<std::string>());
            st.momentum = n.at("momentum").get<real>();
            st.eps = n.at("eps").get<real>();
        }
    } catch (const checkpoint_error&) {
        throw;
    } catch (const std::exception& e) {
        throw checkpoint_corrupt_error("manifest: " + std::string(e.what()));
    }
    return s;
}

} // namespace colearn::model
