#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qal/tensor.hpp"

namespace qal {

// Labeled image set. Images are [N,C,H,W] with values in [0,1].
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;

    int size() const { return static_cast<int>(labels.size()); }
    int channels() const { return images.dim(1); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }

    // Materializes the samples at the given indices as a fresh tensor.
    Dataset select(const std::vector<int>& indices) const;
};

// A minibatch view; images are a fresh copy so in-place trigger stamping on a
// batch can never touch the dataset.
struct Batch {
    Tensor images;
    std::vector<int> labels;
    int size() const { return static_cast<int>(labels.size()); }
};

Batch make_batch(const Dataset& data, const std::vector<int>& indices);
Batch full_batch(const Dataset& data);

// Procedural classification task: each class is a smooth low-frequency
// prototype (sum of three seeded 2-d cosines per channel); samples add
// Gaussian pixel noise and clamp to [0,1].
Dataset gen_synthetic(int num_classes, int per_class, int size, int channels,
                      double noise_std, uint64_t seed);

// CIFAR-10 binary format: records of 1 label byte + 3072 channel-major pixel
// bytes (1024 R, 1024 G, 1024 B), each channel row-major 32x32.
Dataset parse_cifar10_binary(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> serialize_cifar10_binary(const Dataset& data);
Dataset load_cifar10_file(const std::string& path);

// Seeded stratified split; every sample lands in exactly one side.
std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, uint64_t seed);

}  // namespace qal
