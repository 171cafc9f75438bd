#pragma once

#include <imocap/body.hpp>
#include <imocap/detections.hpp>
#include <imocap/errors.hpp>
#include <imocap/geometry.hpp>
#include <imocap/io.hpp>
#include <imocap/metrics.hpp>
#include <imocap/pipeline.hpp>
#include <imocap/robust_loss.hpp>
#include <imocap/rotation.hpp>
#include <imocap/solver.hpp>
#include <imocap/sync.hpp>
#include <imocap/synth.hpp>
