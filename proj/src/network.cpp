#include "fprect/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <malloc.h>
#include <sstream>

#include <Eigen/Core>

#include "fprect/rng.hpp"
#include "fprect/text_io.hpp"

namespace fprect {

namespace {

using Eigen::Dynamic;
template <typename T> using Mat = Eigen::Matrix<T, Dynamic, Dynamic>;
template <typename T> using MapMat = Eigen::Map<Mat<T>>;
template <typename T> using CMapMat = Eigen::Map<const Mat<T>>;
template <typename T> using RowMat = Eigen::Matrix<T, Dynamic, Dynamic, Eigen::RowMajor>;
template <typename T> using MapRowMat = Eigen::Map<RowMat<T>>;
template <typename T> using CMapRowMat = Eigen::Map<const RowMat<T>>;

constexpr double kBnEpsilon = 1e-5;

// Full-scale channel schedule; the desk variant caps it at 256.
constexpr std::array<int, 8> kFullScaleChannels = {32, 64, 64, 128, 256, 512, 1024, 2048};

std::size_t patch_size(const LayerSpec& spec) {
    return static_cast<std::size_t>(spec.kernel) * spec.kernel * spec.in_channels;
}

// Scatters (b,y,x) patches into columns of a (k*k*C) x (B*H*W) matrix,
// zero-padding outside the frame. Channels stay innermost so each (ky,kx)
// slice is one contiguous copy; only padding segments are zeroed, the rest
// of the buffer is fully overwritten.
template <typename T>
void im2col(const Tensor<T>& in, int k, FlatBuffer<T>& cols) {
    const int pad = (k - 1) / 2;
    const int B = in.batch, H = in.height, W = in.width, C = in.channels;
    const std::size_t P = static_cast<std::size_t>(k) * k * C;
    cols.resize(P * static_cast<std::size_t>(B) * H * W);
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                T* col = cols.data() + ((static_cast<std::size_t>(b) * H + y) * W + x) * P;
                for (int ky = 0; ky < k; ++ky) {
                    T* row = col + static_cast<std::size_t>(ky) * k * C;
                    const int yy = y + ky - pad;
                    if (yy < 0 || yy >= H) {
                        std::memset(row, 0, static_cast<std::size_t>(k) * C * sizeof(T));
                        continue;
                    }
                    const int x0 = std::max(0, pad - x);
                    const int x1 = std::min(k, W + pad - x);
                    if (x0 > 0) std::memset(row, 0, static_cast<std::size_t>(x0) * C * sizeof(T));
                    if (x1 > x0)
                        std::memcpy(row + static_cast<std::size_t>(x0) * C,
                                    &in.data[in.index(b, yy, x + x0 - pad, 0)],
                                    static_cast<std::size_t>(x1 - x0) * C * sizeof(T));
                    if (x1 < k)
                        std::memset(row + static_cast<std::size_t>(x1) * C, 0,
                                    static_cast<std::size_t>(k - x1) * C * sizeof(T));
                }
            }
}

// Transpose of im2col: accumulates column gradients back onto the input.
template <typename T>
void col2im(const FlatBuffer<T>& cols, int k, Tensor<T>& dx) {
    const int pad = (k - 1) / 2;
    const int B = dx.batch, H = dx.height, W = dx.width, C = dx.channels;
    const std::size_t P = static_cast<std::size_t>(k) * k * C;
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const T* col = cols.data() + ((static_cast<std::size_t>(b) * H + y) * W + x) * P;
                for (int ky = 0; ky < k; ++ky) {
                    const int yy = y + ky - pad;
                    if (yy < 0 || yy >= H) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int xx = x + kx - pad;
                        if (xx < 0 || xx >= W) continue;
                        T* dst = &dx.data[dx.index(b, yy, xx, 0)];
                        const T* src = col + (static_cast<std::size_t>(ky) * k + kx) * C;
                        for (int c = 0; c < C; ++c) dst[c] += src[c];
                    }
                }
            }
}

template <typename T>
LayerParams<T> zero_params_like(const LayerSpec& spec) {
    LayerParams<T> p;
    p.conv_w.assign(static_cast<std::size_t>(spec.out_channels) * patch_size(spec), T(0));
    p.conv_b.assign(spec.out_channels, T(0));
    if (spec.kind == LayerKind::conv_bn_relu_pool) {
        p.bn_gamma.assign(spec.out_channels, T(0));
        p.bn_beta.assign(spec.out_channels, T(0));
        p.bn_running_mean.assign(spec.out_channels, T(0));
        p.bn_running_var.assign(spec.out_channels, T(0));
    }
    return p;
}

} // namespace

template <typename T>
Network<T> build_network(int input_size, const std::vector<int>& block_channels, int t_out,
                         std::uint64_t init_seed) {
    if (input_size < 2) throw ArgumentError("build_network: input_size too small");
    if (t_out < 1) throw ArgumentError("build_network: t_out must be >= 1");

    Network<T> net;
    net.input_size = input_size;
    net.t_out = t_out;

    int spatial = input_size;
    int in_ch = 1;
    for (int ch : block_channels) {
        if (spatial % 2 != 0)
            throw ArgumentError("build_network: odd spatial size before pooling");
        net.specs.push_back({LayerKind::conv_bn_relu_pool, 3, in_ch, ch});
        spatial /= 2;
        in_ch = ch;
    }
    net.specs.push_back({LayerKind::conv_head, 1, in_ch, t_out});

    Rng root(init_seed);
    for (std::size_t l = 0; l < net.specs.size(); ++l) {
        const LayerSpec& spec = net.specs[l];
        LayerParams<T> p = zero_params_like<T>(spec);
        Rng rng = root.fork(l);
        const double stddev = std::sqrt(2.0 / static_cast<double>(patch_size(spec)));
        for (auto& w : p.conv_w) w = static_cast<T>(stddev * rng.normal());
        if (spec.kind == LayerKind::conv_bn_relu_pool) {
            std::fill(p.bn_gamma.begin(), p.bn_gamma.end(), T(1));
            std::fill(p.bn_running_var.begin(), p.bn_running_var.end(), T(1));
        }
        net.params.push_back(std::move(p));
    }
    return net;
}

NetworkF build_full_network(std::uint64_t init_seed) {
    return build_network<float>(
        256, std::vector<int>(kFullScaleChannels.begin(), kFullScaleChannels.end()), 2, init_seed);
}

NetworkF build_desk_network(int input_size, int t_out, std::uint64_t init_seed) {
    if (input_size < 32 || (input_size & (input_size - 1)) != 0)
        throw ArgumentError("build_desk_network: input_size must be a power of two >= 32");
    std::vector<int> channels;
    for (int s = input_size; s > 1; s /= 2) {
        const std::size_t i = channels.size();
        channels.push_back(std::min(256, kFullScaleChannels[std::min(i, kFullScaleChannels.size() - 1)]));
    }
    return build_network<float>(input_size, channels, t_out, init_seed);
}

std::vector<std::array<int, 3>> layer_output_shapes(const std::vector<LayerSpec>& specs,
                                                    int input_size) {
    std::vector<std::array<int, 3>> shapes;
    int h = input_size, w = input_size;
    for (const auto& spec : specs) {
        if (spec.kind == LayerKind::conv_bn_relu_pool) {
            h /= 2;
            w /= 2;
        }
        shapes.push_back({h, w, spec.out_channels});
    }
    return shapes;
}

template <typename T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& batch, Mode mode, double bn_momentum,
                  ForwardCache<T>* cache) {
    if (batch.height != net.input_size || batch.width != net.input_size || batch.channels != 1)
        throw ShapeError("forward: input must be " + std::to_string(net.input_size) + "x" +
                         std::to_string(net.input_size) + "x1, got " +
                         std::to_string(batch.height) + "x" + std::to_string(batch.width) + "x" +
                         std::to_string(batch.channels));
    if (cache) {
        cache->layers.assign(net.specs.size(), {});
        cache->batch = batch.batch;
    }

    Tensor<T> cur = batch;
    FlatBuffer<T> scratch_cols;
    for (std::size_t l = 0; l < net.specs.size(); ++l) {
        const LayerSpec& spec = net.specs[l];
        LayerParams<T>& params = net.params[l];
        LayerCache<T>* lc = cache ? &cache->layers[l] : nullptr;
        if (cur.channels != spec.in_channels)
            throw ShapeError("forward: layer " + std::to_string(l) + " expects " +
                             std::to_string(spec.in_channels) + " channels, got " +
                             std::to_string(cur.channels));

        const int B = cur.batch, H = cur.height, W = cur.width;
        const std::size_t N = static_cast<std::size_t>(B) * H * W;
        const std::size_t P = patch_size(spec);

        FlatBuffer<T>& cols = lc ? lc->cols : scratch_cols;
        im2col(cur, spec.kernel, cols);
        if (lc) lc->input = cur;

        Tensor<T> conv_out(B, H, W, spec.out_channels, no_init);
        {
            CMapRowMat<T> wmat(params.conv_w.data(), spec.out_channels,
                               static_cast<Eigen::Index>(P));
            CMapMat<T> colmat(cols.data(), static_cast<Eigen::Index>(P),
                              static_cast<Eigen::Index>(N));
            MapMat<T> out(conv_out.data.data(), spec.out_channels,
                          static_cast<Eigen::Index>(N));
            out.noalias() = wmat * colmat;
            CMapMat<T> bias(params.conv_b.data(), spec.out_channels, 1);
            out.colwise() += bias.col(0);
        }

        if (spec.kind == LayerKind::conv_head) {
            cur = std::move(conv_out);
            continue;
        }

        const int C = spec.out_channels;

        // Batch normalization. Accumulation runs in double so results do not
        // depend on how Eigen would tile a reduction.
        std::vector<T> scale(C), shift(C);
        if (mode == Mode::train) {
            std::vector<double> sum(C, 0.0), sumsq(C, 0.0);
            const T* z = conv_out.data.data();
            for (std::size_t n = 0; n < N; ++n, z += C)
                for (int c = 0; c < C; ++c) {
                    const double v = z[c];
                    sum[c] += v;
                    sumsq[c] += v * v;
                }
            if (lc) {
                lc->batch_mean.resize(C);
                lc->batch_inv_std.resize(C);
            }
            for (int c = 0; c < C; ++c) {
                const double mean = sum[c] / static_cast<double>(N);
                const double var = sumsq[c] / static_cast<double>(N) - mean * mean;
                const double inv_std = 1.0 / std::sqrt(var + kBnEpsilon);
                params.bn_running_mean[c] = static_cast<T>(
                    bn_momentum * params.bn_running_mean[c] + (1.0 - bn_momentum) * mean);
                params.bn_running_var[c] = static_cast<T>(
                    bn_momentum * params.bn_running_var[c] + (1.0 - bn_momentum) * var);
                if (lc) {
                    lc->batch_mean[c] = static_cast<T>(mean);
                    lc->batch_inv_std[c] = static_cast<T>(inv_std);
                }
                scale[c] = static_cast<T>(params.bn_gamma[c] * inv_std);
                shift[c] = static_cast<T>(params.bn_beta[c] - params.bn_gamma[c] * inv_std * mean);
            }
        } else {
            for (int c = 0; c < C; ++c) {
                const double inv_std =
                    1.0 / std::sqrt(static_cast<double>(params.bn_running_var[c]) + kBnEpsilon);
                scale[c] = static_cast<T>(params.bn_gamma[c] * inv_std);
                shift[c] = static_cast<T>(params.bn_beta[c] -
                                          params.bn_gamma[c] * inv_std * params.bn_running_mean[c]);
            }
        }
        if (lc) lc->conv_out = conv_out;

        // BN + ReLU fused.
        Tensor<T> relu_out(B, H, W, C, no_init);
        {
            const T* z = conv_out.data.data();
            T* r = relu_out.data.data();
            for (std::size_t n = 0; n < N; ++n, z += C, r += C)
                for (int c = 0; c < C; ++c) {
                    const T y = scale[c] * z[c] + shift[c];
                    r[c] = y > T(0) ? y : T(0);
                }
        }

        // 2x2 stride-2 max pool; ties resolve to the first element in
        // row-major window order.
        if (H % 2 != 0 || W % 2 != 0)
            throw ShapeError("forward: layer " + std::to_string(l) +
                             " pooling requires even spatial size");
        Tensor<T> pooled(B, H / 2, W / 2, C, no_init);
        if (lc) lc->pool_argmax.assign(pooled.size(), 0);
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < H / 2; ++y)
                for (int x = 0; x < W / 2; ++x) {
                    const T* w00 = &relu_out.data[relu_out.index(b, 2 * y, 2 * x, 0)];
                    const T* w01 = w00 + C;
                    const T* w10 = &relu_out.data[relu_out.index(b, 2 * y + 1, 2 * x, 0)];
                    const T* w11 = w10 + C;
                    T* out = &pooled.data[pooled.index(b, y, x, 0)];
                    std::uint8_t* amax =
                        lc ? &lc->pool_argmax[pooled.index(b, y, x, 0)] : nullptr;
                    for (int c = 0; c < C; ++c) {
                        T best = w00[c];
                        std::uint8_t arg = 0;
                        if (w01[c] > best) { best = w01[c]; arg = 1; }
                        if (w10[c] > best) { best = w10[c]; arg = 2; }
                        if (w11[c] > best) { best = w11[c]; arg = 3; }
                        out[c] = best;
                        if (amax) amax[c] = arg;
                    }
                }
        if (lc) lc->relu_out = std::move(relu_out);
        cur = std::move(pooled);
    }
    return cur;
}

template <typename T>
std::pair<double, Tensor<T>> l2_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target)) throw ShapeError("l2_loss: prediction/target shape mismatch");
    const double inv_batch = 1.0 / static_cast<double>(pred.batch);
    double loss = 0.0;
    Tensor<T> grad(pred.batch, pred.height, pred.width, pred.channels);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        loss += d * d;
        grad.data[i] = static_cast<T>(2.0 * d * inv_batch);
    }
    return {loss * inv_batch, std::move(grad)};
}

template <typename T>
NetworkGrads<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                         const Tensor<T>& loss_grad) {
    if (cache.layers.size() != net.specs.size() || cache.batch != loss_grad.batch)
        throw ArgumentError("backward: stale or missing forward cache");

    NetworkGrads<T> grads;
    grads.reserve(net.specs.size());
    for (const auto& spec : net.specs) grads.push_back(zero_params_like<T>(spec));

    Tensor<T> dout = loss_grad;
    for (int l = net.layer_count() - 1; l >= 0; --l) {
        const LayerSpec& spec = net.specs[l];
        const LayerParams<T>& params = net.params[l];
        const LayerCache<T>& lc = cache.layers[l];
        LayerParams<T>& g = grads[l];

        const int B = lc.input.batch, H = lc.input.height, W = lc.input.width;
        const std::size_t N = static_cast<std::size_t>(B) * H * W;
        const std::size_t P = patch_size(spec);
        const int C = spec.out_channels;

        // dZ: gradient at the conv output (pre-BN for blocks).
        Tensor<T> dz;
        if (spec.kind == LayerKind::conv_head) {
            dz = std::move(dout);
        } else {
            // Un-pool onto the ReLU output grid.
            Tensor<T> drelu(B, H, W, C);
            const int Hp = H / 2, Wp = W / 2;
            for (int b = 0; b < B; ++b)
                for (int y = 0; y < Hp; ++y)
                    for (int x = 0; x < Wp; ++x) {
                        const std::size_t pidx = dout.index(b, y, x, 0);
                        const T* dsrc = &dout.data[pidx];
                        const std::uint8_t* amax = &lc.pool_argmax[pidx];
                        for (int c = 0; c < C; ++c) {
                            const int dy = amax[c] >> 1, dx = amax[c] & 1;
                            drelu.at(b, 2 * y + dy, 2 * x + dx, c) = dsrc[c];
                        }
                    }

            // ReLU gate.
            for (std::size_t i = 0; i < drelu.size(); ++i)
                if (!(lc.relu_out.data[i] > T(0))) drelu.data[i] = T(0);

            // BN backward with the cached batch statistics.
            std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
            {
                const T* dy = drelu.data.data();
                const T* z = lc.conv_out.data.data();
                for (std::size_t n = 0; n < N; ++n, dy += C, z += C)
                    for (int c = 0; c < C; ++c) {
                        const double xhat =
                            (z[c] - lc.batch_mean[c]) * static_cast<double>(lc.batch_inv_std[c]);
                        sum_dy[c] += dy[c];
                        sum_dy_xhat[c] += dy[c] * xhat;
                    }
            }
            for (int c = 0; c < C; ++c) {
                g.bn_beta[c] = static_cast<T>(sum_dy[c]);
                g.bn_gamma[c] = static_cast<T>(sum_dy_xhat[c]);
            }
            dz = Tensor<T>(B, H, W, C, no_init);
            {
                const double invN = 1.0 / static_cast<double>(N);
                const T* dy = drelu.data.data();
                const T* z = lc.conv_out.data.data();
                T* out = dz.data.data();
                for (std::size_t n = 0; n < N; ++n, dy += C, z += C, out += C)
                    for (int c = 0; c < C; ++c) {
                        const double inv_std = lc.batch_inv_std[c];
                        const double xhat = (z[c] - lc.batch_mean[c]) * inv_std;
                        const double term = dy[c] - invN * sum_dy[c] - invN * xhat * sum_dy_xhat[c];
                        out[c] = static_cast<T>(params.bn_gamma[c] * inv_std * term);
                    }
            }
        }

        // Conv backward.
        {
            CMapMat<T> dzmat(dz.data.data(), C, static_cast<Eigen::Index>(N));
            CMapMat<T> colmat(lc.cols.data(), static_cast<Eigen::Index>(P),
                              static_cast<Eigen::Index>(N));
            MapRowMat<T> dw(g.conv_w.data(), C, static_cast<Eigen::Index>(P));
            dw.noalias() = dzmat * colmat.transpose();

            std::vector<double> db(C, 0.0);
            const T* p = dz.data.data();
            for (std::size_t n = 0; n < N; ++n, p += C)
                for (int c = 0; c < C; ++c) db[c] += p[c];
            for (int c = 0; c < C; ++c) g.conv_b[c] = static_cast<T>(db[c]);

            if (l > 0) {
                FlatBuffer<T> dcols(P * N);
                CMapRowMat<T> wmat(params.conv_w.data(), C, static_cast<Eigen::Index>(P));
                MapMat<T> dcolmat(dcols.data(), static_cast<Eigen::Index>(P),
                                  static_cast<Eigen::Index>(N));
                dcolmat.noalias() = wmat.transpose() * dzmat;
                Tensor<T> dx(B, H, W, spec.in_channels);
                col2im(dcols, spec.kernel, dx);
                dout = std::move(dx);
            }
        }
    }
    return grads;
}

namespace {

template <typename T, typename Fn>
void for_each_trained_array(LayerParams<T>& p, Fn&& fn) {
    fn(p.conv_w);
    fn(p.conv_b);
    fn(p.bn_gamma);
    fn(p.bn_beta);
}

} // namespace

template <typename T>
void adam_step(Network<T>& net, const NetworkGrads<T>& grads, AdamState<T>& state,
               const TrainConfig& config) {
    if (grads.size() != net.params.size())
        throw ArgumentError("adam_step: gradient/parameter layer count mismatch");
    if (state.m.empty()) {
        for (const auto& spec : net.specs) {
            state.m.push_back(zero_params_like<T>(spec));
            state.v.push_back(zero_params_like<T>(spec));
        }
    }
    state.step += 1;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (std::size_t l = 0; l < net.params.size(); ++l) {
        const LayerParams<T>& g = grads[l];
        std::array<std::vector<T>*, 4> ps = {&net.params[l].conv_w, &net.params[l].conv_b,
                                             &net.params[l].bn_gamma, &net.params[l].bn_beta};
        std::array<const std::vector<T>*, 4> gs = {&g.conv_w, &g.conv_b, &g.bn_gamma,
                                                   &g.bn_beta};
        std::array<std::vector<T>*, 4> ms = {&state.m[l].conv_w, &state.m[l].conv_b,
                                             &state.m[l].bn_gamma, &state.m[l].bn_beta};
        std::array<std::vector<T>*, 4> vs = {&state.v[l].conv_w, &state.v[l].conv_b,
                                             &state.v[l].bn_gamma, &state.v[l].bn_beta};
        for (int a = 0; a < 4; ++a) {
            if (gs[a]->size() != ps[a]->size())
                throw ArgumentError("adam_step: gradient array size mismatch");
            for (std::size_t i = 0; i < ps[a]->size(); ++i) {
                const double grad = (*gs[a])[i];
                double m = b1 * (*ms[a])[i] + (1.0 - b1) * grad;
                double v = b2 * (*vs[a])[i] + (1.0 - b2) * grad * grad;
                (*ms[a])[i] = static_cast<T>(m);
                (*vs[a])[i] = static_cast<T>(v);
                const double mhat = m / corr1;
                const double vhat = v / corr2;
                (*ps[a])[i] -= static_cast<T>(config.learning_rate * mhat /
                                              (std::sqrt(vhat) + config.adam_epsilon));
            }
        }
    }
}

TensorF record_tensor(const Image& img) {
    TensorF t(1, img.height, img.width, 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) t.data[i] = static_cast<float>(img.data[i]);
    return t;
}

TrainHistory train(NetworkF& net, const DatasetManifest& manifest, const std::string& base_dir,
                   const TrainConfig& config, const std::string& checkpoint_dir) {
#ifdef __GLIBC__
    // The loop churns a few hundred MB of activation buffers per iteration;
    // keeping large blocks on the free list avoids mmap/munmap page faults.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    if (config.batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
    if (config.learning_rate < 0.0) throw ArgumentError("train: learning_rate must be >= 0");
    if (!(config.adam_beta1 > 0.0 && config.adam_beta1 < 1.0) ||
        !(config.adam_beta2 > 0.0 && config.adam_beta2 < 1.0))
        throw ArgumentError("train: adam betas must lie in (0,1)");

    namespace fs = std::filesystem;
    const int S = net.input_size;
    const std::size_t n = manifest.records.size();
    if (n < static_cast<std::size_t>(config.batch_size))
        throw ArgumentError("train: fewer records than one batch");

    // Decode the whole training set up front; records are small.
    std::vector<std::vector<float>> images(n);
    std::vector<std::vector<float>> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const ManifestRecord& rec = manifest.records[i];
        Image img;
        try {
            img = load_pgm((fs::path(base_dir) / rec.image_path).string());
        } catch (const Error& e) {
            throw Error("train: unreadable record " + rec.source_id + " (" + rec.image_path +
                        "): " + e.what());
        }
        if (img.width != S || img.height != S)
            throw ShapeError("train: record " + rec.image_path + " is " +
                             std::to_string(img.width) + "x" + std::to_string(img.height) +
                             ", expected " + std::to_string(S));
        if (rec.coefficients.size() != net.t_out)
            throw ArgumentError("train: record " + rec.image_path + " has " +
                                std::to_string(rec.coefficients.size()) +
                                " coefficients, expected " + std::to_string(net.t_out));
        images[i].resize(img.data.size());
        for (std::size_t j = 0; j < img.data.size(); ++j)
            images[i][j] = static_cast<float>(img.data[j]);
        labels[i].resize(net.t_out);
        for (int j = 0; j < net.t_out; ++j)
            labels[i][j] = static_cast<float>(rec.coefficients[j]);
    }

    const long iterations = iterations_per_epoch(static_cast<long>(n), config.batch_size);
    if (iterations < 1) throw ArgumentError("train: no full batch available");

    if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);

    AdamState<float> state;
    TrainHistory history;
    Rng root(config.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TensorF batch(config.batch_size, S, S, 1);
    TensorF target(config.batch_size, 1, 1, net.t_out);
    const std::size_t pixels = static_cast<std::size_t>(S) * S;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffler = root.fork(static_cast<std::uint64_t>(epoch));
        shuffler.shuffle(order);

        double epoch_loss = 0.0;
        for (long it = 0; it < iterations; ++it) {
            for (int b = 0; b < config.batch_size; ++b) {
                const std::size_t idx = order[static_cast<std::size_t>(it) * config.batch_size + b];
                std::memcpy(&batch.data[b * pixels], images[idx].data(),
                            pixels * sizeof(float));
                std::memcpy(&target.data[static_cast<std::size_t>(b) * net.t_out],
                            labels[idx].data(), net.t_out * sizeof(float));
            }
            ForwardCache<float> cache;
            TensorF pred = forward(net, batch, Mode::train, config.bn_momentum, &cache);
            auto [loss, grad] = l2_loss(pred, target);
            NetworkGrads<float> grads = backward(net, cache, grad);
            adam_step(net, grads, state, config);
            history.iterations.push_back({epoch, static_cast<int>(it), loss});
            epoch_loss += loss;
        }
        history.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(iterations));

        if (!checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d.fpc", epoch);
            save_checkpoint(net, (fs::path(checkpoint_dir) / name).string());
        }
    }
    return history;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores little-endian float32");

const char* kind_name(LayerKind k) {
    return k == LayerKind::conv_bn_relu_pool ? "conv_bn_relu_pool" : "conv_head";
}

LayerKind kind_from_name(const std::string& s, const std::string& path) {
    if (s == "conv_bn_relu_pool") return LayerKind::conv_bn_relu_pool;
    if (s == "conv_head") return LayerKind::conv_head;
    throw ParseError("checkpoint: unknown layer kind '" + s + "' in " + path);
}

template <typename T>
std::size_t param_count(const LayerParams<T>& p) {
    return p.conv_w.size() + p.conv_b.size() + p.bn_gamma.size() + p.bn_beta.size() +
           p.bn_running_mean.size() + p.bn_running_var.size();
}

template <typename T>
void append_floats(std::vector<float>& out, const std::vector<T>& v) {
    for (T x : v) out.push_back(static_cast<float>(x));
}

} // namespace

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");

    std::size_t total = 0;
    for (const auto& p : net.params) total += param_count(p);

    out << "fprnet 1\n";
    out << "input_size " << net.input_size << "\n";
    out << "t_out " << net.t_out << "\n";
    out << "layers " << net.layer_count() << "\n";
    for (const auto& spec : net.specs)
        out << "layer " << kind_name(spec.kind) << " " << spec.kernel << " " << spec.in_channels
            << " " << spec.out_channels << "\n";
    out << "params " << total << "\n";

    std::vector<float> flat;
    flat.reserve(total);
    for (const auto& p : net.params) {
        append_floats(flat, p.conv_w);
        append_floats(flat, p.conv_b);
        append_floats(flat, p.bn_gamma);
        append_floats(flat, p.bn_beta);
        append_floats(flat, p.bn_running_mean);
        append_floats(flat, p.bn_running_var);
    }
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + path);
}

namespace {

NetworkF load_checkpoint_impl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    std::string line;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line))
            throw ParseError("checkpoint: missing " + std::string(what) + " in " + path);
        return std::istringstream(line);
    };

    {
        auto head = next_line("magic");
        std::string magic;
        int version = -1;
        head >> magic >> version;
        if (magic != "fprnet")
            throw ParseError("checkpoint: bad magic '" + magic + "' in " + path);
        if (version != 1) throw ParseError("checkpoint: version mismatch in " + path);
    }

    NetworkF net;
    int layers = 0;
    std::size_t declared = 0;
    {
        auto l1 = next_line("input_size");
        std::string key;
        l1 >> key >> net.input_size;
        if (key != "input_size" || net.input_size < 2)
            throw ParseError("checkpoint: malformed input_size in " + path);
        auto l2 = next_line("t_out");
        l2 >> key >> net.t_out;
        if (key != "t_out" || net.t_out < 1)
            throw ParseError("checkpoint: malformed t_out in " + path);
        auto l3 = next_line("layers");
        l3 >> key >> layers;
        if (key != "layers" || layers < 1)
            throw ParseError("checkpoint: malformed layer count in " + path);
    }
    for (int l = 0; l < layers; ++l) {
        auto row = next_line("layer");
        std::string key, kind;
        LayerSpec spec;
        row >> key >> kind >> spec.kernel >> spec.in_channels >> spec.out_channels;
        if (key != "layer" || !row)
            throw ParseError("checkpoint: malformed layer line in " + path);
        spec.kind = kind_from_name(kind, path);
        net.specs.push_back(spec);
    }
    {
        auto row = next_line("params");
        std::string key;
        row >> key >> declared;
        if (key != "params") throw ParseError("checkpoint: missing params line in " + path);
    }

    std::size_t expected = 0;
    for (const auto& spec : net.specs) expected += param_count(zero_params_like<float>(spec));
    if (declared != expected)
        throw ParseError("checkpoint: header declares " + std::to_string(declared) +
                         " parameters but the architecture requires " +
                         std::to_string(expected) + " in " + path);

    std::vector<float> flat(expected);
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(float))
        throw ParseError("checkpoint: truncated parameter payload in " + path);
    in.peek();
    if (!in.eof()) throw ParseError("checkpoint: trailing data in " + path);

    std::size_t off = 0;
    auto take = [&](std::vector<float>& dst) {
        std::memcpy(dst.data(), flat.data() + off, dst.size() * sizeof(float));
        off += dst.size();
    };
    for (const auto& spec : net.specs) {
        LayerParams<float> p = zero_params_like<float>(spec);
        take(p.conv_w);
        take(p.conv_b);
        take(p.bn_gamma);
        take(p.bn_beta);
        take(p.bn_running_mean);
        take(p.bn_running_var);
        net.params.push_back(std::move(p));
    }
    return net;
}

} // namespace

NetworkF load_checkpoint(const std::string& path) { return load_checkpoint_impl(path); }

void load_checkpoint_into(NetworkF& net, const std::string& path) {
    NetworkF loaded = load_checkpoint_impl(path);
    bool match = loaded.input_size == net.input_size && loaded.t_out == net.t_out &&
                 loaded.specs.size() == net.specs.size();
    for (std::size_t l = 0; match && l < net.specs.size(); ++l)
        match = loaded.specs[l].kind == net.specs[l].kind &&
                loaded.specs[l].kernel == net.specs[l].kernel &&
                loaded.specs[l].in_channels == net.specs[l].in_channels &&
                loaded.specs[l].out_channels == net.specs[l].out_channels;
    if (!match)
        throw ParseError("checkpoint: architecture mismatch loading " + path +
                         " (input " + std::to_string(loaded.input_size) + " vs " +
                         std::to_string(net.input_size) + ")");
    net = std::move(loaded);
}

void save_history(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "fprhistory 1\n";
    for (const auto& e : history.iterations)
        out << e.epoch << " " << e.iteration << " " << format_real(e.loss) << "\n";
    for (std::size_t i = 0; i < history.epoch_mean_loss.size(); ++i)
        out << "epoch_mean " << i << " " << format_real(history.epoch_mean_loss[i]) << "\n";
    if (!out) throw IoError("write failed for " + path);
}

// Explicit instantiations: float for training and inference, double for
// gradient verification.
template Network<float> build_network<float>(int, const std::vector<int>&, int, std::uint64_t);
template Network<double> build_network<double>(int, const std::vector<int>&, int, std::uint64_t);
template Tensor<float> forward<float>(Network<float>&, const Tensor<float>&, Mode, double,
                                      ForwardCache<float>*);
template Tensor<double> forward<double>(Network<double>&, const Tensor<double>&, Mode, double,
                                        ForwardCache<double>*);
template std::pair<double, Tensor<float>> l2_loss<float>(const Tensor<float>&,
                                                         const Tensor<float>&);
template std::pair<double, Tensor<double>> l2_loss<double>(const Tensor<double>&,
                                                           const Tensor<double>&);
template NetworkGrads<float> backward<float>(const Network<float>&, const ForwardCache<float>&,
                                             const Tensor<float>&);
template NetworkGrads<double> backward<double>(const Network<double>&,
                                               const ForwardCache<double>&,
                                               const Tensor<double>&);
template void adam_step<float>(Network<float>&, const NetworkGrads<float>&, AdamState<float>&,
                               const TrainConfig&);
template void adam_step<double>(Network<double>&, const NetworkGrads<double>&,
                                AdamState<double>&, const TrainConfig&);
template void save_checkpoint<float>(const Network<float>&, const std::string&);
template void save_checkpoint<double>(const Network<double>&, const std::string&);

} // namespace fprect
