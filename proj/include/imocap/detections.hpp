#pragma once

#include <imocap/errors.hpp>

#include <Eigen/Core>
#include <string>
#include <vector>

namespace imocap {

/// One frame of 2D keypoints. Column z holds (x, y, confidence) of joint z,
/// in pixels and [0, 1].
using FrameKeypoints = Eigen::Matrix3Xd;

struct DetectionSet {
    std::vector<std::vector<FrameKeypoints>> videos;

    int video_count() const { return static_cast<int>(videos.size()); }
    int frame_count(int video) const { return static_cast<int>(videos.at(video).size()); }

    void validate(int joints) const
    {
        for (std::size_t j = 0; j < videos.size(); ++j) {
            if (videos[j].empty()) {
                throw InputError("video " + std::to_string(j) + ": no frames");
            }
            for (std::size_t f = 0; f < videos[j].size(); ++f) {
                const auto& kp = videos[j][f];
                const std::string where = "video " + std::to_string(j) + " frame " + std::to_string(f);
                if (kp.cols() != joints) {
                    throw InputError(where + ": expected " + std::to_string(joints) + " joints, got " +
                                     std::to_string(kp.cols()));
                }
                if (!kp.allFinite()) {
                    throw InputError(where + ": non-finite keypoint");
                }
                if ((kp.row(2).array() < 0.0).any() || (kp.row(2).array() > 1.0).any()) {
                    throw InputError(where + ": confidence outside [0, 1]");
                }
            }
        }
    }
};

} // namespace imocap
