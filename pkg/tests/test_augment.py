import math

import numpy as np
import pytest

from gasaug import (
    AugmentParams,
    Box3D,
    DetectionFrame,
    EmptyPool,
    GasCloudPool,
    GtObject,
    PlacementKind,
    PointCloud,
    SeededRng,
    augment_frame,
    choose_placement,
    generate_cloud,
    insert_cloud,
    points_in_box,
    schedule_p_aug,
)

from testutil import make_blob_source

VEHICLE = Box3D((10.0, 2.0, 0.9), (4.0, 1.8, 1.6), 0.0)


@pytest.fixture(scope="module")
def pool() -> GasCloudPool:
    pool = GasCloudPool()
    src = make_blob_source()
    pool.add_source(src)
    for seed in range(3):
        pool.generated.append(generate_cloud(src, SeededRng(seed)))
    return pool


def background_frame(n: int = 200, gt=None) -> DetectionFrame:
    gen = np.random.default_rng(0)
    pts = np.column_stack([gen.uniform(-30, 30, (n, 3)), gen.uniform(0, 1, n)])
    return DetectionFrame(PointCloud(pts, "frame0"), gt or [])


class TestSchedule:
    def test_epoch_zero_is_zero(self):
        assert schedule_p_aug(0, 10) == 0.0

    def test_epoch_t_is_one(self):
        assert schedule_p_aug(10, 10) == 1.0

    def test_linear_in_between(self):
        assert schedule_p_aug(3, 10) == pytest.approx(0.3)

    def test_clamped_beyond_t(self):
        assert schedule_p_aug(25, 10) == 1.0

    def test_exact_steps(self):
        for t in (1, 7, 40):
            for e in range(t + 1):
                assert schedule_p_aug(e, t) == e / t

    def test_validation(self):
        with pytest.raises(ValueError):
            schedule_p_aug(-1, 10)
        with pytest.raises(ValueError):
            schedule_p_aug(0, 0)


class TestChoosePlacement:
    def test_forced_top_branch(self):
        params = AugmentParams(p_gas=0.0, p_top=1.0)
        placement = choose_placement(VEHICLE, SeededRng(0), params)
        assert placement.kind is PlacementKind.TOP
        assert placement.z_face == pytest.approx(VEHICLE.top_z)
        assert placement.z_face > VEHICLE.center[2] + VEHICLE.height / 2 - 1e-12
        assert (placement.x, placement.y) == VEHICLE.center[:2]
        assert placement.yaw == VEHICLE.yaw

    def test_back_center_anchor_no_jitter(self):
        vehicle = Box3D((0.0, 0.0, 0.9), (4.0, 1.8, 1.6), 0.0)
        params = AugmentParams(p_gas=1.0, p_top=0.0, jitter=0.0)
        for seed in range(30):
            placement = choose_placement(vehicle, SeededRng(seed), params)
            assert placement.x == pytest.approx(-2.3)  # -l/2 - 0.3
            if placement.kind is PlacementKind.BACK_CENTER:
                assert placement.y == pytest.approx(0.0)
                break
        else:
            pytest.fail("back-center anchor never drawn in 30 seeds")
        assert placement.z_face == pytest.approx(vehicle.bottom_z)

    def test_rear_anchor_rotates_with_vehicle_yaw(self):
        vehicle = Box3D((0.0, 0.0, 0.9), (4.0, 1.8, 1.6), math.pi / 2)
        params = AugmentParams(p_gas=1.0, p_top=0.0, jitter=0.0)
        placement = choose_placement(vehicle, SeededRng(1), params)
        # vehicle faces +y, so the rear anchor sits in the -y world direction
        assert placement.y == pytest.approx(-2.3, abs=1.0)
        assert placement.y < 0
        assert placement.yaw == pytest.approx(math.pi / 2)

    def test_none_when_both_branches_fail(self):
        params = AugmentParams(p_gas=0.0, p_top=0.0)
        assert choose_placement(VEHICLE, SeededRng(0), params) is None

    def test_branch_statistics(self):
        params = AugmentParams(p_gas=0.5, p_top=0.1)
        rng = SeededRng(2024)
        counts = {PlacementKind.TOP: 0, "rear": 0, None: 0}
        trials = 10_000
        for _ in range(trials):
            p = choose_placement(VEHICLE, rng, params)
            if p is None:
                counts[None] += 1
            elif p.kind is PlacementKind.TOP:
                counts[PlacementKind.TOP] += 1
            else:
                counts["rear"] += 1
        assert abs(counts[PlacementKind.TOP] / trials - 0.10) <= 0.009
        assert abs(counts["rear"] / trials - 0.45) <= 0.015


class TestInsertCloud:
    def test_appends_exact_count(self, pool):
        frame = background_frame()
        gas = pool.generated[0]
        params = AugmentParams(p_gas=1.0, p_top=0.0)
        placement = choose_placement(VEHICLE, SeededRng(3), params)
        result = insert_cloud(frame, gas, placement)
        assert len(result.frame.cloud) == len(frame.cloud) + len(gas.cloud)
        assert len(result.gas_boxes) == 1
        assert result.box_point_ranges == [(len(frame.cloud), len(result.frame.cloud))]

    def test_gas_box_contains_inserted_points(self, pool):
        frame = background_frame()
        gas = pool.generated[1]
        params = AugmentParams(p_gas=1.0, p_top=0.0)
        placement = choose_placement(VEHICLE, SeededRng(4), params)
        result = insert_cloud(frame, gas, placement)
        inside = points_in_box(result.frame.cloud, result.gas_boxes[0])
        assert set(result.gas_point_indices.tolist()) <= set(inside.tolist())

    def test_gas_box_yaw_tracks_pose(self, pool):
        vehicle = Box3D((5.0, 1.0, 0.9), (4.0, 1.8, 1.6), 0.3)
        frame = background_frame()
        params = AugmentParams(p_gas=1.0, p_top=0.0)
        placement = choose_placement(vehicle, SeededRng(5), params)
        result = insert_cloud(frame, pool.generated[0], placement)
        assert result.gas_boxes[0].yaw == pytest.approx(0.3)


class TestAugmentFrame:
    def test_p_aug_zero_is_identity(self, pool):
        frame = background_frame(gt=[GtObject(VEHICLE, "Car")])
        params = AugmentParams(p_aug=0.0)
        result = augment_frame(frame, pool, params, SeededRng(0))
        assert result.frame.cloud is frame.cloud
        assert result.gas_boxes == []
        assert len(result.gas_point_indices) == 0

    def test_scheduled_epoch_zero_is_identity(self, pool):
        frame = background_frame(gt=[GtObject(VEHICLE, "Car")])
        params = AugmentParams(epoch=0, total_epochs=10)
        result = augment_frame(frame, pool, params, SeededRng(0))
        assert result.frame.cloud is frame.cloud

    def test_forced_single_vehicle_single_box(self, pool):
        frame = background_frame(gt=[GtObject(VEHICLE, "Car")])
        params = AugmentParams(p_gas=1.0, p_top=0.0, p_aug=1.0)
        result = augment_frame(frame, pool, params, SeededRng(1))
        assert len(result.gas_boxes) == 1
        assert len(result.gas_point_indices) == len(result.frame.cloud) - len(frame.cloud)

    def test_non_vehicle_classes_skipped(self, pool):
        frame = background_frame(
            gt=[GtObject(VEHICLE, "Pedestrian"), GtObject(VEHICLE, "Cyclist")]
        )
        params = AugmentParams(p_gas=1.0, p_top=1.0, p_aug=1.0)
        result = augment_frame(frame, pool, params, SeededRng(2))
        assert result.gas_boxes == []

    def test_gt_boxes_unchanged(self, pool):
        gts = [GtObject(VEHICLE, "Car", 1, 0.2)]
        frame = background_frame(gt=gts)
        params = AugmentParams(p_gas=1.0, p_top=0.0, p_aug=1.0)
        result = augment_frame(frame, pool, params, SeededRng(3))
        assert result.frame.gt_boxes == gts

    def test_every_gas_box_covers_its_inserted_range(self, pool):
        gts = [
            GtObject(Box3D((8.0 * i, 0.0, 0.9), (4.0, 1.8, 1.6), 0.1 * i), "Car")
            for i in range(1, 4)
        ]
        frame = background_frame(gt=gts)
        params = AugmentParams(p_gas=1.0, p_top=0.0, p_aug=1.0)
        result = augment_frame(frame, pool, params, SeededRng(4))
        assert len(result.gas_boxes) == 3
        for box, (start, stop) in zip(result.gas_boxes, result.box_point_ranges):
            assert stop > start
            inside = set(points_in_box(result.frame.cloud, box).tolist())
            assert set(range(start, stop)) <= inside

    def test_deterministic(self, pool):
        frame = background_frame(gt=[GtObject(VEHICLE, "Car")])
        params = AugmentParams(p_gas=0.7, p_top=0.2, p_aug=0.8)
        a = augment_frame(frame, pool, params, SeededRng(42))
        b = augment_frame(frame, pool, params, SeededRng(42))
        assert a.frame.cloud == b.frame.cloud
        assert a.gas_boxes == b.gas_boxes
        assert np.array_equal(a.gas_point_indices, b.gas_point_indices)

    def test_empty_pool_rejected(self):
        frame = background_frame(gt=[GtObject(VEHICLE, "Car")])
        with pytest.raises(EmptyPool):
            augment_frame(frame, GasCloudPool(), AugmentParams(p_aug=1.0), SeededRng(0))

    def test_attachment_fraction(self, pool):
        # p_gas=0.5, p_top=0.1 => attach fraction 0.1 + 0.9*0.5 = 0.55
        frame = background_frame(n=20, gt=[GtObject(VEHICLE, "Car")])
        params = AugmentParams(p_gas=0.5, p_top=0.1, p_aug=1.0)
        rng = SeededRng(7)
        trials = 10_000
        attached = sum(
            bool(augment_frame(frame, pool, params, rng).gas_boxes)
            for _ in range(trials)
        )
        assert abs(attached / trials - 0.55) <= 0.015

    def test_rear_anchors_equifrequent(self, pool):
        params = AugmentParams(p_gas=1.0, p_top=0.0)
        rng = SeededRng(8)
        counts = {k: 0 for k in PlacementKind}
        trials = 10_000
        for _ in range(trials):
            placement = choose_placement(VEHICLE, rng, params)
            counts[placement.kind] += 1
        sigma = math.sqrt(trials * (1 / 3) * (2 / 3))
        for kind in (
            PlacementKind.BACK_CENTER,
            PlacementKind.BACK_LEFT,
            PlacementKind.BACK_RIGHT,
        ):
            assert abs(counts[kind] - trials / 3) <= 3 * sigma
