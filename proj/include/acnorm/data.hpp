#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acnorm/tensor.hpp"

namespace acnorm {

// Synthetic desk-scale task. Domain knobs shift the input distribution to
// create controllable source -> target gaps: intensity_shift moves overall
// brightness, texture_freq changes the background stripe frequency,
// shape_family switches the foreground geometry, noise_sigma adds pixel
// noise.
struct SyntheticTaskSpec {
    std::string task = "segmentation"; // or "classification"
    int image_size = 64;
    int n_train = 96;
    int n_val = 16;
    int n_test = 24;
    double intensity_shift = 0.0;
    double texture_freq = 2.0;
    std::string shape_family = "blobs"; // blobs | vessels | mixed
    double noise_sigma = 0.05;
    std::string label_mode = "count"; // classification: count | family
    int n_classes = 3;                // classification only
    std::uint64_t seed = 0;

    void validate() const;
    int head_outputs() const { return task == "segmentation" ? 1 : n_classes; }
};

enum class Split { train, val, test };

std::string to_string(Split s);

struct Sample {
    Tensor image; // 1 x H x W
    Tensor mask;  // 1 x H x W, binary (segmentation)
    int label = 0;
};

struct Dataset {
    std::string task;
    Split split = Split::train;
    int image_size = 0;
    int n_classes = 1;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

// Deterministic: the same spec and split always produce bitwise-identical
// data. Splits draw from disjoint seed streams.
Dataset generate_split(const SyntheticTaskSpec& spec, Split split);

struct TaskData {
    Dataset train, val, test;
};

TaskData generate_task(const SyntheticTaskSpec& spec);

// Stacks samples[indices] into (B x 1 x H x W, labels / masks).
struct Batch {
    Tensor images;
    Tensor masks;            // segmentation
    std::vector<int> labels; // classification
};

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

} // namespace acnorm
