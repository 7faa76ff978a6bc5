// Copyright 2026 The pvnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "pvnet/checkpoint.hpp"
#include "pvnet/config.hpp"
#include "pvnet/dataset.hpp"
#include "pvnet/fusion.hpp"
#include "pvnet/geometry.hpp"
#include "pvnet/gradcheck.hpp"
#include "pvnet/image.hpp"
#include "pvnet/network.hpp"
#include "pvnet/objectives.hpp"
#include "pvnet/ops.hpp"
#include "pvnet/optim.hpp"
#include "pvnet/pipeline.hpp"
#include "pvnet/synth.hpp"
#include "pvnet/tensor.hpp"
#include "pvnet/voxel_map.hpp"
#include "pvnet/voxelnet.hpp"
