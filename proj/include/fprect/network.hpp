#ifndef FPRECT_NETWORK_HPP
#define FPRECT_NETWORK_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fprect/synth.hpp"
#include "fprect/tensor.hpp"

namespace fprect {

enum class LayerKind { conv_bn_relu_pool, conv_head };

// Same-padded convolution; block layers add BN, ReLU and 2x2/2 max pooling,
// which requires even spatial input.
struct LayerSpec {
    LayerKind kind = LayerKind::conv_bn_relu_pool;
    int kernel = 3;
    int in_channels = 0;
    int out_channels = 0;
};

template <typename T>
struct LayerParams {
    std::vector<T> conv_w; // out_ch x (k*k*in_ch), patch index (ky, kx, c)
    std::vector<T> conv_b; // out_ch
    std::vector<T> bn_gamma, bn_beta;              // out_ch, block layers only
    std::vector<T> bn_running_mean, bn_running_var; // out_ch, block layers only
};

template <typename T>
struct Network {
    int input_size = 0;
    int t_out = 0;
    std::vector<LayerSpec> specs;
    std::vector<LayerParams<T>> params;

    int layer_count() const { return static_cast<int>(specs.size()); }
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

enum class Mode { train, eval };

// Per-layer activations retained by a train-mode forward pass for backward.
template <typename T>
struct LayerCache {
    Tensor<T> input;
    FlatBuffer<T> cols;        // im2col matrix, (k*k*in_ch) x (B*H*W) col-major
    Tensor<T> conv_out;        // post conv+bias, pre BN
    std::vector<T> batch_mean, batch_inv_std; // per channel, train-mode stats
    Tensor<T> relu_out;        // post ReLU, pre pool
    std::vector<std::uint8_t> pool_argmax;    // 0..3 per pooled element
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    int batch = 0;
};

// Matches LayerParams shape-for-shape; BN running stats carry no gradient.
template <typename T>
using NetworkGrads = std::vector<LayerParams<T>>;

struct TrainConfig {
    int batch_size = 64;
    int epochs = 40;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double bn_momentum = 0.9;
    std::uint64_t seed = 0;
};

template <typename T>
struct AdamState {
    std::vector<LayerParams<T>> m, v;
    long step = 0;
};

struct LossEntry {
    int epoch;
    int iteration;
    double loss;
};

struct TrainHistory {
    std::vector<LossEntry> iterations;
    std::vector<double> epoch_mean_loss;
};

// General builder: one conv+BN+ReLU+pool block per channel entry, then a 1x1
// head. Spatial size must reach exactly 1 after the pools... callers pass
// log2(input_size) channel entries for a 1x1 head output; smaller lists leave
// a spatial head output (used by gradient tests).
template <typename T>
Network<T> build_network(int input_size, const std::vector<int>& block_channels, int t_out,
                         std::uint64_t init_seed = 0);

// Full-scale nine-layer architecture: blocks of 32,64,64,128,256,512,1024,2048
// channels on a 256x256x1 input, then a 1x1 head with 2 outputs.
NetworkF build_full_network(std::uint64_t init_seed = 0);

// Scaled-down variant: same block pattern, log2(input_size) blocks, channel
// schedule capped at 256. input_size must be a power of two >= 32.
NetworkF build_desk_network(int input_size, int t_out, std::uint64_t init_seed = 0);

// (height, width, channels) after each layer, from the declared input size.
std::vector<std::array<int, 3>> layer_output_shapes(const std::vector<LayerSpec>& specs,
                                                    int input_size);

template <typename T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& batch, Mode mode, double bn_momentum = 0.9,
                  ForwardCache<T>* cache = nullptr);

// Eval-mode forward; touches no network state, safe for concurrent callers.
template <typename T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
    return forward(const_cast<Network<T>&>(net), batch, Mode::eval, 0.9,
                   static_cast<ForwardCache<T>*>(nullptr));
}

// Mean over the batch of the squared Euclidean distance; gradient w.r.t. pred.
template <typename T>
std::pair<double, Tensor<T>> l2_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Exact reverse-mode gradients for conv weights/biases and BN gamma/beta.
template <typename T>
NetworkGrads<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                         const Tensor<T>& loss_grad);

template <typename T>
void adam_step(Network<T>& net, const NetworkGrads<T>& grads, AdamState<T>& state,
               const TrainConfig& config);

// Shuffled mini-batch training with Adam; drops the partial final batch.
// Writes a checkpoint per epoch into checkpoint_dir unless it is empty.
TrainHistory train(NetworkF& net, const DatasetManifest& manifest, const std::string& base_dir,
                   const TrainConfig& config, const std::string& checkpoint_dir = "");

inline long iterations_per_epoch(long n_samples, int batch_size) {
    return n_samples / batch_size;
}

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path);
NetworkF load_checkpoint(const std::string& path);
// Validates that the stored architecture matches `net` before loading.
void load_checkpoint_into(NetworkF& net, const std::string& path);

void save_history(const TrainHistory& history, const std::string& path);

// Decoded, preprocessed-image tensor for one record (batch = 1).
TensorF record_tensor(const Image& img);

} // namespace fprect

#endif
