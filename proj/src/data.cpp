#include "acnorm/data.hpp"

#include <algorithm>
#include <cmath>

#include "acnorm/errors.hpp"
#include "acnorm/rng.hpp"

namespace acnorm {

void SyntheticTaskSpec::validate() const {
    if (task != "segmentation" && task != "classification")
        throw ConfigError("SyntheticTaskSpec: task must be segmentation or classification");
    if (image_size < 8) throw ConfigError("SyntheticTaskSpec: image_size too small");
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw ConfigError("SyntheticTaskSpec: split counts must be >= 1");
    if (shape_family != "blobs" && shape_family != "vessels" && shape_family != "mixed")
        throw ConfigError("SyntheticTaskSpec: unknown shape_family " + shape_family);
    if (task == "classification") {
        if (label_mode != "count" && label_mode != "family")
            throw ConfigError("SyntheticTaskSpec: label_mode must be count or family");
        if (label_mode == "family" && shape_family != "mixed")
            throw ConfigError("SyntheticTaskSpec: family labels need shape_family=mixed");
        if (label_mode == "family" && n_classes != 2)
            throw ConfigError("SyntheticTaskSpec: family labels are binary");
        if (n_classes < 2) throw ConfigError("SyntheticTaskSpec: need >= 2 classes");
    }
    if (noise_sigma < 0.0) throw ConfigError("SyntheticTaskSpec: noise_sigma must be >= 0");
    if (texture_freq < 0.0) throw ConfigError("SyntheticTaskSpec: texture_freq must be >= 0");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

namespace {

void stamp_blob(Tensor& mask, Rng& rng, int size) {
    const double cx = rng.uniform(0.2, 0.8) * size;
    const double cy = rng.uniform(0.2, 0.8) * size;
    const double a = rng.uniform(0.14, 0.28) * size;
    const double b = rng.uniform(0.14, 0.28) * size;
    const double rot = rng.uniform(0.0, M_PI);
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double u = (dx * cr + dy * sr) / a;
            const double v = (-dx * sr + dy * cr) / b;
            if (u * u + v * v <= 1.0) mask(0, 0, y, x) = 1.0;
        }
}

void stamp_vessel(Tensor& mask, Rng& rng, int size) {
    // Random-walk curve with momentum, stamped with a small disc.
    double x = rng.uniform(0.1, 0.9) * size;
    double y = rng.uniform(0.1, 0.9) * size;
    double heading = rng.uniform(0.0, 2.0 * M_PI);
    const double thickness = rng.uniform(1.2, 2.2);
    const int steps = int(size * 1.5);
    const int r = int(std::ceil(thickness));
    for (int s = 0; s < steps; ++s) {
        heading += rng.normal(0.0, 0.18);
        x += std::cos(heading);
        y += std::sin(heading);
        if (x < 1 || x >= size - 1 || y < 1 || y >= size - 1) {
            heading += M_PI / 2.0; // bounce away from the border
            x = std::clamp(x, 1.0, size - 2.0);
            y = std::clamp(y, 1.0, size - 2.0);
        }
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const int py = int(y) + dy, px = int(x) + dx;
                if (py < 0 || py >= size || px < 0 || px >= size) continue;
                const double d2 = (py - y) * (py - y) + (px - x) * (px - x);
                if (d2 <= thickness * thickness) mask(0, 0, py, px) = 1.0;
            }
    }
}

Sample make_sample(const SyntheticTaskSpec& spec, Rng& rng) {
    const int size = spec.image_size;
    Sample s;
    s.image = Tensor({1, 1, std::size_t(size), std::size_t(size)});
    s.mask = Tensor({1, 1, std::size_t(size), std::size_t(size)});

    // Background: base level plus oriented sinusoidal texture.
    const double base = 0.15;
    const double tex_amp = 0.08;
    const double theta = rng.uniform(0.0, M_PI);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double t = 2.0 * M_PI * spec.texture_freq * (x * ct + y * st) / size + phase;
            s.image(0, 0, y, x) = base + tex_amp * std::sin(t);
        }

    // Foreground shapes.
    bool vessel_family = spec.shape_family == "vessels";
    if (spec.shape_family == "mixed") vessel_family = rng.uniform() < 0.5;

    int max_count = 3;
    if (spec.task == "classification" && spec.label_mode == "count")
        max_count = spec.n_classes;
    const int n_shapes = 1 + int(rng.uniform_below(std::uint64_t(max_count)));

    for (int i = 0; i < n_shapes; ++i) {
        if (vessel_family)
            stamp_vessel(s.mask, rng, size);
        else
            stamp_blob(s.mask, rng, size);
    }

    const double fg = 0.55 + rng.uniform(0.0, 0.15);
    for (std::size_t i = 0; i < s.image.numel(); ++i)
        if (s.mask[i] > 0.5) s.image[i] = fg + (s.image[i] - base);

    for (std::size_t i = 0; i < s.image.numel(); ++i)
        s.image[i] += spec.intensity_shift + spec.noise_sigma * rng.normal();

    if (spec.task == "classification")
        s.label = (spec.label_mode == "count") ? (n_shapes - 1) : (vessel_family ? 1 : 0);
    return s;
}

} // namespace

Dataset generate_split(const SyntheticTaskSpec& spec, Split split) {
    spec.validate();
    Dataset ds;
    ds.task = spec.task;
    ds.split = split;
    ds.image_size = spec.image_size;
    ds.n_classes = spec.task == "classification" ? spec.n_classes : 1;
    const int count = split == Split::train ? spec.n_train
                      : split == Split::val ? spec.n_val
                                            : spec.n_test;
    const std::uint64_t split_seed = derive_seed(spec.seed, "split:" + to_string(split));
    ds.samples.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(split_seed, "sample:" + std::to_string(i)));
        ds.samples.push_back(make_sample(spec, rng));
    }
    return ds;
}

TaskData generate_task(const SyntheticTaskSpec& spec) {
    return {generate_split(spec, Split::train), generate_split(spec, Split::val),
            generate_split(spec, Split::test)};
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("make_batch: empty index list");
    const std::size_t size = std::size_t(ds.image_size);
    Batch batch;
    batch.images = Tensor({indices.size(), 1, size, size});
    if (ds.task == "segmentation") batch.masks = Tensor({indices.size(), 1, size, size});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const Sample& s = ds.samples.at(indices[b]);
        for (std::size_t i = 0; i < size * size; ++i) {
            batch.images[b * size * size + i] = s.image[i];
            if (ds.task == "segmentation") batch.masks[b * size * size + i] = s.mask[i];
        }
        if (ds.task == "classification") batch.labels.push_back(s.label);
    }
    return batch;
}

} // namespace acnorm
