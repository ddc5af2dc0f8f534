#include "qal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "qal/errors.hpp"
#include "qal/rng.hpp"

namespace qal {

namespace {
constexpr size_t kCifarRecordBytes = 3073;
constexpr int kCifarSide = 32;
constexpr int kCifarChannels = 3;
constexpr double kPi = 3.14159265358979323846;
}  // namespace

Dataset Dataset::select(const std::vector<int>& indices) const {
    const int c = channels(), h = height(), w = width();
    const size_t sample = static_cast<size_t>(c) * h * w;
    Dataset out;
    out.images = Tensor::zeros({static_cast<int>(indices.size()), c, h, w});
    out.labels.reserve(indices.size());
    double* dst = out.images.data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        std::copy_n(images.data() + idx * sample, sample, dst + i * sample);
        out.labels.push_back(labels[static_cast<size_t>(idx)]);
    }
    out.num_classes = num_classes;
    out.name = name;
    return out;
}

Batch make_batch(const Dataset& data, const std::vector<int>& indices) {
    Dataset sub = data.select(indices);
    return Batch{sub.images, sub.labels};
}

Batch full_batch(const Dataset& data) {
    return Batch{data.images.clone(), data.labels};
}

Dataset gen_synthetic(int num_classes, int per_class, int size, int channels,
                      double noise_std, uint64_t seed) {
    if (num_classes < 2) throw ContractError("gen_synthetic: need at least 2 classes");
    if (size < 8) throw ContractError("gen_synthetic: image size must be >= 8");
    if (per_class < 1) throw ContractError("gen_synthetic: per_class must be positive");

    Rng root(seed);
    const int n = num_classes * per_class;
    Dataset out;
    out.images = Tensor::zeros({n, channels, size, size});
    out.labels.resize(static_cast<size_t>(n));
    out.num_classes = num_classes;
    out.name = "synthetic";

    // Class prototypes: three cosine waves per channel with class-specific
    // frequencies and phases, rescaled into [0.2, 0.8] so noise rarely clips.
    std::vector<double> protos(static_cast<size_t>(num_classes) * channels * size * size);
    for (int cls = 0; cls < num_classes; ++cls) {
        Rng crng = root.fork(static_cast<uint64_t>(cls));
        for (int ch = 0; ch < channels; ++ch) {
            double* plane =
                protos.data() + (static_cast<size_t>(cls) * channels + ch) * size * size;
            double fx[3], fy[3], ph[3], amp[3];
            for (int k = 0; k < 3; ++k) {
                fx[k] = crng.uniform(0.5, 2.5);
                fy[k] = crng.uniform(0.5, 2.5);
                ph[k] = crng.uniform(0.0, 2.0 * kPi);
                amp[k] = crng.uniform(0.5, 1.0);
            }
            double lo = 1e300, hi = -1e300;
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    double v = 0.0;
                    for (int k = 0; k < 3; ++k) {
                        v += amp[k] * std::cos(2.0 * kPi * (fx[k] * x + fy[k] * y) / size + ph[k]);
                    }
                    plane[y * size + x] = v;
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
            const double span = hi > lo ? hi - lo : 1.0;
            for (int i = 0; i < size * size; ++i) {
                plane[i] = 0.2 + 0.6 * (plane[i] - lo) / span;
            }
        }
    }

    Rng nrng = root.fork(0x5e11u);
    const size_t sample = static_cast<size_t>(channels) * size * size;
    for (int i = 0; i < n; ++i) {
        const int cls = i % num_classes;
        out.labels[static_cast<size_t>(i)] = cls;
        const double* proto = protos.data() + static_cast<size_t>(cls) * sample;
        double* dst = out.images.data() + static_cast<size_t>(i) * sample;
        for (size_t p = 0; p < sample; ++p) {
            const double v = proto[p] + (noise_std > 0.0 ? nrng.normal(0.0, noise_std) : 0.0);
            dst[p] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

Dataset parse_cifar10_binary(const std::vector<uint8_t>& bytes) {
    if (bytes.size() % kCifarRecordBytes != 0) {
        const size_t offset = (bytes.size() / kCifarRecordBytes) * kCifarRecordBytes;
        throw FormatError("cifar10: length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073 (trailing partial record at offset " +
                          std::to_string(offset) + ")");
    }
    const int n = static_cast<int>(bytes.size() / kCifarRecordBytes);
    Dataset out;
    out.num_classes = 10;
    out.name = "cifar10";
    out.labels.resize(static_cast<size_t>(n));
    if (n == 0) {
        out.images = Tensor();
        return out;
    }
    out.images = Tensor::zeros({n, kCifarChannels, kCifarSide, kCifarSide});
    const size_t sample = static_cast<size_t>(kCifarChannels) * kCifarSide * kCifarSide;
    for (int i = 0; i < n; ++i) {
        const uint8_t* rec = bytes.data() + static_cast<size_t>(i) * kCifarRecordBytes;
        if (rec[0] > 9) {
            throw FormatError("cifar10: label byte " + std::to_string(rec[0]) +
                              " > 9 in record " + std::to_string(i));
        }
        out.labels[static_cast<size_t>(i)] = rec[0];
        double* dst = out.images.data() + static_cast<size_t>(i) * sample;
        for (size_t p = 0; p < sample; ++p) dst[p] = rec[1 + p] / 255.0;
    }
    return out;
}

std::vector<uint8_t> serialize_cifar10_binary(const Dataset& data) {
    if (data.size() > 0 &&
        (data.channels() != kCifarChannels || data.height() != kCifarSide ||
         data.width() != kCifarSide)) {
        throw FormatError("cifar10 serialize: dataset is not 3x32x32");
    }
    std::vector<uint8_t> bytes;
    bytes.reserve(static_cast<size_t>(data.size()) * kCifarRecordBytes);
    const size_t sample = static_cast<size_t>(kCifarChannels) * kCifarSide * kCifarSide;
    for (int i = 0; i < data.size(); ++i) {
        bytes.push_back(static_cast<uint8_t>(data.labels[static_cast<size_t>(i)]));
        const double* src = data.images.data() + static_cast<size_t>(i) * sample;
        for (size_t p = 0; p < sample; ++p) {
            const double v = std::clamp(src[p], 0.0, 1.0);
            bytes.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
        }
    }
    return bytes;
}

Dataset load_cifar10_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open cifar10 file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return parse_cifar10_binary(bytes);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double test_fraction, uint64_t seed) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0) {
        throw ContractError("split: test_fraction must lie in (0, 1)");
    }
    std::vector<std::vector<int>> per_class(static_cast<size_t>(data.num_classes));
    for (int i = 0; i < data.size(); ++i) {
        per_class[static_cast<size_t>(data.labels[static_cast<size_t>(i)])].push_back(i);
    }
    // Largest-remainder allocation keeps the overall test count at
    // round(fraction * N) while every class stays within +/-1 of its
    // proportional share.
    const int want_total = static_cast<int>(std::lround(test_fraction * data.size()));
    std::vector<int> take(static_cast<size_t>(data.num_classes), 0);
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (int cls = 0; cls < data.num_classes; ++cls) {
        const double share = test_fraction * per_class[static_cast<size_t>(cls)].size();
        take[static_cast<size_t>(cls)] = static_cast<int>(std::floor(share));
        assigned += take[static_cast<size_t>(cls)];
        remainders.push_back({share - std::floor(share), cls});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < want_total - assigned && i < data.num_classes; ++i) {
        ++take[static_cast<size_t>(remainders[static_cast<size_t>(i)].second)];
    }

    Rng rng(seed);
    std::vector<int> train_idx, test_idx;
    for (int cls = 0; cls < data.num_classes; ++cls) {
        auto& idx = per_class[static_cast<size_t>(cls)];
        if (idx.empty()) continue;
        Rng crng = rng.fork(static_cast<uint64_t>(cls));
        crng.shuffle(idx);
        const int n_test = take[static_cast<size_t>(cls)];
        if (n_test == 0 || n_test == static_cast<int>(idx.size())) {
            throw ContractError("split: class " + std::to_string(cls) +
                                " would be emptied on one side");
        }
        test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + n_test);
        train_idx.insert(train_idx.end(), idx.begin() + n_test, idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {data.select(train_idx), data.select(test_idx)};
}

}  // namespace qal
