#pragma once

#include <cstdint>
#include <vector>

#include "resplat/geometry/camera.hpp"
#include "resplat/render/gaussians.hpp"
#include "resplat/tensor/tensor.hpp"

namespace resplat {

/// Interleaved RGB image with values in [0, 1].
struct Image {
    int width = 0, height = 0;
    std::vector<float> rgb; // [height, width, 3]

    Image() = default;
    Image(int w, int h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}

    template <class T>
    Tensor<T> tensor() const {
        return Tensor<T>::from({height, width, 3}, std::vector<T>(rgb.begin(), rgb.end()));
    }
    template <class T>
    static Image from(const Tensor<T>& t) {
        require(t.rank() == 3 && t.dim(2) == 3, "image: expected [H, W, 3], got ", t.shape());
        Image img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
        for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<float>(t[i]);
        return img;
    }
};

/// Single-channel depth map.
struct DepthMap {
    int width = 0, height = 0;
    std::vector<float> depth; // [height, width]

    template <class T>
    Tensor<T> tensor() const {
        return Tensor<T>::from({height, width}, std::vector<T>(depth.begin(), depth.end()));
    }
};

struct View {
    Camera camera;
    Image image;
};

/// Raw Gaussian parameters in the library layout, used as ground truth.
struct GaussianCloud {
    int sh_degree = 1;
    std::vector<double> g; // [count, layout::width(sh_degree)]

    std::int64_t size() const { return static_cast<std::int64_t>(g.size()) / layout::width(sh_degree); }
};

struct SceneSample {
    std::vector<View> inputs;
    std::vector<View> targets;
    std::vector<DepthMap> depths; // per input view; empty when no oracle depth exists
    double radius = 1.0;
    double near = 0.1, far = 10.0;
    std::uint64_t seed = 0;
    GaussianCloud truth; // empty unless the scene was synthesized

    int width() const { return inputs.empty() ? 0 : inputs[0].image.width; }
    int height() const { return inputs.empty() ? 0 : inputs[0].image.height; }

    std::vector<Camera> input_cameras() const {
        std::vector<Camera> c;
        for (const auto& v : inputs) c.push_back(v.camera);
        return c;
    }

    void validate() const {
        require(!inputs.empty(), "scene: no input views");
        require(!targets.empty(), "scene: no target views");
        const int w = width(), h = height();
        for (const auto* group : {&inputs, &targets})
            for (const auto& v : *group) {
                v.camera.validate();
                require(v.image.width == w && v.image.height == h, "scene: image ", v.image.width, "x",
                        v.image.height, " differs from ", w, "x", h);
                require(v.camera.width == w && v.camera.height == h, "scene: camera size ", v.camera.width, "x",
                        v.camera.height, " differs from image size ", w, "x", h);
                require(v.image.rgb.size() == static_cast<std::size_t>(w) * h * 3, "scene: image buffer size");
            }
        require(depths.empty() || depths.size() == inputs.size(), "scene: ", depths.size(), " depth maps for ",
                inputs.size(), " input views");
        for (const auto& d : depths)
            require(d.width == w && d.height == h, "scene: depth map ", d.width, "x", d.height, " differs from ", w,
                    "x", h);
        require(radius > 0, "scene: radius must be positive");
        require(near > 0 && far > near, "scene: invalid depth range [", near, ", ", far, "]");
    }
};

/// Stacks input images into [N, H, W, 3].
template <class T>
Tensor<T> stack_images(const std::vector<View>& views) {
    require(!views.empty(), "stack_images: no views");
    const int w = views[0].image.width, h = views[0].image.height;
    std::vector<T> v;
    v.reserve(views.size() * static_cast<std::size_t>(w) * h * 3);
    for (const auto& view : views) {
        require(view.image.width == w && view.image.height == h, "stack_images: inconsistent image sizes");
        v.insert(v.end(), view.image.rgb.begin(), view.image.rgb.end());
    }
    return Tensor<T>::from({static_cast<std::int64_t>(views.size()), h, w, 3}, std::move(v));
}

} // namespace resplat

