#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "colearn/data/volume.hpp"

namespace colearn::data {

namespace {

// Per-sample draws. Class-dependent shifts are scaled by the signal dials, so
// at zero signal both classes come from the same distribution.
constexpr double base_irregularity = 0.10;
constexpr double irregularity_gap = 0.30;
constexpr double irregularity_spread = 0.10;
constexpr double base_core_boost = 0.20;
constexpr double core_boost_gap = 0.60;
constexpr double core_boost_spread = 0.20;
constexpr double texture_sigma = 0.30;
constexpr double background_sigma = 0.20;
constexpr double core_fraction = 0.55;
constexpr std::size_t post_contrast_channel = 1;

binary_grid largest_component(const binary_grid& g) {
    std::vector<int> label(g.values.size(), -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    const auto& d = g.dims;
    for (std::size_t s = 0; s < g.values.size(); ++s) {
        if (!g.values[s] || label[s] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        sizes.push_back(0);
        label[s] = id;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            ++sizes.back();
            const long x = static_cast<long>(cur % d.w), y = static_cast<long>((cur / d.w) % d.h),
                       z = static_cast<long>(cur / (d.w * d.h));
            const long nb[6][3] = {{z + 1, y, x}, {z - 1, y, x}, {z, y + 1, x}, {z, y - 1, x}, {z, y, x + 1}, {z, y, x - 1}};
            for (const auto& n : nb) {
                if (!g.get_or_zero(n[0], n[1], n[2])) continue;
                const std::size_t ni = d.index(static_cast<std::size_t>(n[0]), static_cast<std::size_t>(n[1]), static_cast<std::size_t>(n[2]));
                if (label[ni] < 0) {
                    label[ni] = id;
                    stack.push_back(ni);
                }
            }
        }
    }
    binary_grid out(d, 0);
    if (sizes.empty()) return out;
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < label.size(); ++i) out.values[i] = label[i] == best;
    return out;
}

} // namespace

void validate(const cohort_spec& spec) {
    if (!(spec.class_ratio > 0.0 && spec.class_ratio < 1.0)) throw std::invalid_argument("cohort: class_ratio must lie in (0, 1)");
    if (spec.dims.d < 8 || spec.dims.h < 8 || spec.dims.w < 8) throw std::invalid_argument("cohort: every dimension must be >= 8");
    for (double s : {spec.geometry_signal, spec.intensity_signal}) {
        if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("cohort: signal strengths must lie in [0, 1]");
    }
}

void validate(const volume_sample& s) {
    for (const auto& c : s.channels) {
        if (!(c.dims == s.mask.dims) || c.values.size() != s.mask.dims.count()) {
            throw std::invalid_argument("sample " + s.id + ": channel dims differ from mask dims");
        }
        for (float v : c.values) {
            if (!std::isfinite(v)) throw std::invalid_argument("sample " + s.id + ": non-finite intensity");
        }
    }
    if (s.mask.values.size() != s.mask.dims.count()) throw std::invalid_argument("sample " + s.id + ": mask size mismatch");
    if (foreground_count(s.mask) == 0) throw std::invalid_argument("sample " + s.id + ": empty mask");
    if (component_count(s.mask) != 1) throw std::invalid_argument("sample " + s.id + ": mask is not one 6-connected component");
    if (s.label != 0 && s.label != 1) throw std::invalid_argument("sample " + s.id + ": label must be 0 or 1");
}

volume_sample generate_sample(const cohort_spec& spec, int label, std::mt19937_64& rng) {
    validate(spec);
    if (label != 0 && label != 1) throw std::invalid_argument("generate_sample: label must be 0 or 1");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    const dims3 d = spec.dims;
    const double min_extent = static_cast<double>(std::min({d.d, d.h, d.w}));
    const double scale = 0.28 * min_extent * uniform(0.85, 1.15);
    const std::array<double, 3> radii{scale * uniform(0.8, 1.2), scale * uniform(0.8, 1.2), scale * uniform(0.8, 1.2)};
    const std::array<double, 3> center{0.5 * (static_cast<double>(d.d) - 1.0) + uniform(-0.06, 0.06) * min_extent,
                                       0.5 * (static_cast<double>(d.h) - 1.0) + uniform(-0.06, 0.06) * min_extent,
                                       0.5 * (static_cast<double>(d.w) - 1.0) + uniform(-0.06, 0.06) * min_extent};
    const double exponent = uniform(1.8, 2.6);
    const double y = static_cast<double>(label);
    const double amplitude = std::clamp(base_irregularity + irregularity_gap * spec.geometry_signal * y +
                                            irregularity_spread * gauss(rng), 0.0, 0.6);
    const double freq_azimuth = std::floor(uniform(3.0, 6.0));
    const double freq_polar = std::floor(uniform(2.0, 5.0));
    const double phase_azimuth = uniform(0.0, 2.0 * std::numbers::pi);
    const double phase_polar = uniform(0.0, 2.0 * std::numbers::pi);
    const double core_boost = std::max(0.0, base_core_boost + core_boost_gap * spec.intensity_signal * y +
                                                core_boost_spread * gauss(rng));
    std::array<double, channel_count> channel_level{};
    for (auto& l : channel_level) l = uniform(0.6, 1.4);

    // Relative radius rho / boundary for every voxel; <= 1 is inside.
    grid3<double> relative(d, 0.0);
    binary_grid raw(d, 0);
    for (std::size_t z = 0; z < d.d; ++z)
        for (std::size_t yy = 0; yy < d.h; ++yy)
            for (std::size_t x = 0; x < d.w; ++x) {
                const double p[3] = {(static_cast<double>(z) - center[0]) / radii[0],
                                     (static_cast<double>(yy) - center[1]) / radii[1],
                                     (static_cast<double>(x) - center[2]) / radii[2]};
                const double rho = std::pow(std::pow(std::abs(p[0]), exponent) + std::pow(std::abs(p[1]), exponent) +
                                                std::pow(std::abs(p[2]), exponent),
                                            1.0 / exponent);
                const double planar = std::hypot(p[1], p[2]);
                const double azimuth = std::atan2(p[1], p[2]);
                const double polar = std::atan2(planar, p[0]);
                const double boundary = 1.0 + amplitude * std::sin(freq_azimuth * azimuth + phase_azimuth) *
                                                  std::sin(freq_polar * polar + phase_polar);
                const double rel = rho / boundary;
                relative.at(z, yy, x) = rel;
                raw.at(z, yy, x) = rel <= 1.0;
            }
    // The centre voxel is always inside, so the mask is never empty.
    raw.at(static_cast<std::size_t>(std::lround(center[0])), static_cast<std::size_t>(std::lround(center[1])),
           static_cast<std::size_t>(std::lround(center[2]))) = 1;

    volume_sample s;
    s.label = label;
    s.mask = largest_component(raw);
    for (std::size_t c = 0; c < channel_count; ++c) {
        s.channels[c] = float_grid(d, 0.0f);
        for (std::size_t i = 0; i < d.count(); ++i) {
            double v;
            if (s.mask.values[i]) {
                v = channel_level[c] + texture_sigma * gauss(rng);
                if (c == post_contrast_channel && relative.values[i] < core_fraction) v += core_boost;
            } else {
                v = background_sigma * gauss(rng);
            }
            s.channels[c].values[i] = static_cast<float>(v);
        }
    }
    return s;
}

std::vector<volume_sample> generate_cohort(const cohort_spec& spec) {
    validate(spec);
    if (spec.n_samples == 0) throw std::invalid_argument("cohort: n_samples must be positive");
    const auto positives = static_cast<std::size_t>(std::lround(spec.class_ratio * static_cast<double>(spec.n_samples)));
    std::vector<int> labels(spec.n_samples, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(positives, spec.n_samples)), 1);
    std::mt19937_64 order_rng(spec.seed);
    std::shuffle(labels.begin(), labels.end(), order_rng);

    std::vector<volume_sample> cohort(spec.n_samples);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(spec.n_samples); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(i), std::uint32_t{0x5eed}};
        std::mt19937_64 rng(seq);
        cohort[i] = generate_sample(spec, labels[i], rng);
        char id[32];
        std::snprintf(id, sizeof id, "s%04zu", i);
        cohort[i].id = id;
    }
    return cohort;
}

} // namespace colearn::data
