import math

import numpy as np
import pytest
import yaml

from occ4d.errors import ActorOutOfBounds, ManifestError, UnknownTrack
from occ4d.grid import GridSpec, PanopticGrid
from occ4d.io import load_boxes, load_manifest, load_sequence, read_semantic_grid
from occ4d.synth import (
    Actor,
    Block,
    Drop,
    EgoMotion,
    Frustum,
    IdSwitch,
    NoiseSpec,
    Scenario,
    Waypoint,
    corrupt,
    load_noise,
    load_scenario,
    noise_from_dict,
    render_sequence,
    scenario_from_dict,
    write_sequence,
)


def vehicle_scenario(table, **kw):
    """One static two-meter vehicle centered on a voxel center."""
    args = dict(
        spec=GridSpec((40, 40, 12), 0.4, (-8.0, -8.0, -1.6)),
        table=table,
        frames=2,
        actors=(
            Actor(
                track_id=1,
                class_id=3,
                size=(2.0, 2.0, 2.0),
                waypoints=(Waypoint(0, (0.2, 0.2, 0.6)),),
            ),
        ),
    )
    args.update(kw)
    return Scenario(**args)


class TestActorAndEgo:
    def test_waypoint_interpolation(self):
        a = Actor(
            track_id=1, class_id=3, size=(1, 1, 1),
            waypoints=(Waypoint(0, (0, 0, 0), 0.0), Waypoint(4, (4, 2, 0), 1.0)),
        )
        c, yaw = a.pose_at(2)
        assert c == pytest.approx((2.0, 1.0, 0.0))
        assert yaw == pytest.approx(0.5)

    def test_waypoint_clamping(self):
        a = Actor(
            track_id=1, class_id=3, size=(1, 1, 1),
            waypoints=(Waypoint(2, (1, 0, 0)), Waypoint(5, (4, 0, 0))),
        )
        assert a.pose_at(0)[0] == (1.0, 0.0, 0.0)
        assert a.pose_at(9)[0] == (4.0, 0.0, 0.0)

    def test_waypoints_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            Actor(
                track_id=1, class_id=3, size=(1, 1, 1),
                waypoints=(Waypoint(3, (0, 0, 0)), Waypoint(3, (1, 0, 0))),
            )
        with pytest.raises(ValueError, match="at least one"):
            Actor(track_id=1, class_id=3, size=(1, 1, 1), waypoints=())

    def test_straight_ego(self):
        ego = EgoMotion(kind="straight", speed=2.0, yaw0=0.0, start=(1.0, 0.0, 0.5))
        pose = ego.pose_at(1.5)
        np.testing.assert_allclose(pose[:3, 3], [4.0, 0.0, 0.5])
        np.testing.assert_allclose(pose[:3, :3], np.eye(3))

    def test_arc_ego_moves_along_circle(self):
        ego = EgoMotion(kind="arc", speed=1.0, yaw_rate=0.5)
        r = 1.0 / 0.5
        for t in (0.5, 1.0, 2.0):
            pose = ego.pose_at(t)
            # center of the turn is at (0, r): stay at distance r from it
            d = math.hypot(pose[0, 3] - 0.0, pose[1, 3] - r)
            assert d == pytest.approx(r, abs=1e-12)

    def test_ego_validation(self):
        with pytest.raises(ValueError, match="kind"):
            EgoMotion(kind="sideways")
        with pytest.raises(ValueError, match="yaw_rate"):
            EgoMotion(kind="arc", speed=1.0, yaw_rate=0.0)


class TestScenarioRender:
    def test_counted_vehicle_voxels(self, table6):
        sc = vehicle_scenario(table6)
        _, sems, boxes, gts = render_sequence(sc)
        # 2 m cube centered on a voxel center at 0.4 m resolution:
        # 5 centers per axis land inside
        assert int((gts[0].classes == 3).sum()) == 125
        assert int((gts[0].instances == 1).sum()) == 125
        gts[0].validate_labels(table6)
        assert [b.track_id for b in boxes[0]] == [1]

    def test_empty_scenario_is_all_free(self, table6):
        sc = Scenario(
            spec=GridSpec((4, 4, 2), 0.5, 0.0), table=table6, frames=1
        )
        _, sems, _, gts = render_sequence(sc)
        assert (sems[0].classes == 0).all()
        assert (gts[0].classes == 0).all()
        assert (gts[0].instances == 0).all()

    def test_ground_layers(self, table6):
        sc = Scenario(
            spec=GridSpec((3, 3, 4), 0.5, 0.0),
            table=table6,
            frames=1,
            ground_class=1,
            ground_layers=2,
        )
        _, sems, _, _ = render_sequence(sc)
        cls = sems[0].classes.reshape(4, 3, 3)  # (nz, ny, nx)
        assert (cls[:2] == 1).all()
        assert (cls[2:] == 0).all()

    def test_block_half_open_bounds(self, table6):
        sc = Scenario(
            spec=GridSpec((4, 1, 1), 0.5, 0.0),
            table=table6,
            frames=1,
            blocks=(Block(class_id=2, min_corner=(0.25, 0, 0), max_corner=(1.25, 1, 1)),),
        )
        _, sems, _, _ = render_sequence(sc)
        # centers 0.25 (included), 0.75, 1.25 (excluded), 1.75
        np.testing.assert_array_equal(sems[0].classes, [2, 2, 0, 0])

    def test_moving_actor_tracks_waypoints(self, table6):
        sc = vehicle_scenario(
            table6,
            frames=3,
            actors=(
                Actor(
                    track_id=1, class_id=3, size=(2.0, 2.0, 2.0),
                    waypoints=(
                        Waypoint(0, (-3.0, 0.2, 0.6)),
                        Waypoint(2, (3.0, 0.2, 0.6)),
                    ),
                ),
            ),
        )
        _, _, boxes, gts = render_sequence(sc)
        assert boxes[1][0].center[0] == pytest.approx(0.0)
        # the instance footprint moves with the box
        for f, cx in [(0, -3.0), (1, 0.0), (2, 3.0)]:
            sel = np.flatnonzero(gts[f].instances == 1)
            from occ4d.grid import grid_centers

            mean_x = grid_centers(sc.spec)[sel][:, 0].mean()
            assert mean_x == pytest.approx(cx, abs=0.25)

    def test_actor_out_of_bounds(self, table6):
        sc = vehicle_scenario(table6, margin=0.4)
        # fine at the center; shove it against the wall and it trips
        render_sequence(sc)
        bad = vehicle_scenario(
            table6,
            margin=0.4,
            frames=2,
            actors=(
                Actor(
                    track_id=5, class_id=3, size=(2.0, 2.0, 2.0),
                    waypoints=(
                        Waypoint(0, (0.2, 0.2, 0.6)),
                        Waypoint(1, (-7.0, 0.2, 0.6)),
                    ),
                ),
            ),
        )
        with pytest.raises(ActorOutOfBounds) as exc:
            render_sequence(bad)
        assert exc.value.frame_index == 1
        assert exc.value.track_id == 5

    def test_margin_checked_in_grid_frame(self, table6):
        # ego drives forward; a world-static actor eventually leaves the grid
        sc = vehicle_scenario(
            table6,
            frames=6,
            margin=0.4,
            ego=EgoMotion(kind="straight", speed=8.0),
        )
        with pytest.raises(ActorOutOfBounds):
            render_sequence(sc)

    def test_frustum_visibility(self, table6):
        sc = Scenario(
            spec=GridSpec((8, 1, 1), 0.5, 0.0),
            table=table6,
            frames=1,
            frustum=Frustum(x_range=(1.0, 2.0), y_range=(-5.0, 5.0)),
        )
        _, sems, _, _ = render_sequence(sc)
        np.testing.assert_array_equal(
            sems[0].visibility,
            [False, False, True, True, False, False, False, False],
        )

    def test_no_frustum_means_no_mask(self, table6):
        sc = Scenario(spec=GridSpec((2, 1, 1), 0.5, 0.0), table=table6, frames=1)
        _, sems, _, gts = render_sequence(sc)
        assert sems[0].visibility is None
        assert gts[0].visibility is None

    def test_manifest_shape(self, table6):
        sc = vehicle_scenario(table6, rate_hz=4.0, sequence_id="demo-1")
        manifest, _, _, _ = render_sequence(sc)
        assert manifest.sequence_id == "demo-1"
        assert manifest.boxes_path == "boxes.yaml"
        assert [f.grid_path for f in manifest.frames] == [
            "frames/000000.occ", "frames/000001.occ",
        ]
        assert manifest.frames[1].timestamp == pytest.approx(0.25)

    def test_spec_snapped_to_f32(self, table6):
        sc = Scenario(
            spec=GridSpec((2, 1, 1), 0.1, -40.2), table=table6, frames=1
        )
        assert sc.spec.voxel_size[0] == float(np.float32(0.1))
        assert sc.spec.origin[0] == float(np.float32(-40.2))

    def test_scenario_validation(self, table6):
        with pytest.raises(ValueError, match="frame"):
            Scenario(spec=GridSpec((2, 1, 1), 0.5, 0.0), table=table6, frames=0)
        with pytest.raises(ValueError, match="unique"):
            vehicle_scenario(
                table6,
                actors=(
                    Actor(1, 3, (1.0, 1.0, 1.0), (Waypoint(0, (0, 0, 0)),)),
                    Actor(1, 4, (1.0, 1.0, 1.0), (Waypoint(0, (2, 2, 0)),)),
                ),
            )


class TestWriteSequence:
    def test_tree_and_loadability(self, tmp_path, table6):
        sc = vehicle_scenario(table6)
        gt_manifest = write_sequence(sc, tmp_path)
        assert gt_manifest.base_dir == tmp_path / "gt"
        frames = list(load_sequence(gt_manifest))
        assert len(frames) == 2
        assert int((frames[0][1].instances == 1).sum()) == 125
        sem_manifest = load_manifest(tmp_path / "semantic" / "manifest.yaml")
        sem = read_semantic_grid(sem_manifest.grid_file(0))
        assert int((sem.classes == 3).sum()) == 125
        boxes = load_boxes(gt_manifest.boxes_file(), table6)
        assert [(b.frame_index, b.track_id) for b in boxes] == [(0, 1), (1, 1)]
        assert (tmp_path / "semantic" / "boxes.yaml").read_bytes() == (
            tmp_path / "gt" / "boxes.yaml"
        ).read_bytes()

    def test_write_is_deterministic(self, tmp_path, table6):
        sc = vehicle_scenario(table6)
        write_sequence(sc, tmp_path / "a")
        write_sequence(sc, tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (
                tmp_path / "b" / rel
            ).read_bytes()


def two_track_gts(table, nframes=4):
    """Two static single-voxel tracks on a tiny line grid."""
    spec = GridSpec((6, 1, 1), 0.5, 0.0)
    gts = []
    for f in range(nframes):
        classes = np.zeros(spec.nvox, dtype=np.uint16)
        instances = np.zeros(spec.nvox, dtype=np.uint32)
        classes[1] = 3
        instances[1] = 1
        classes[4] = 4
        instances[4] = 2
        gts.append(
            PanopticGrid(
                spec=spec, classes=classes, instances=instances, frame_index=f
            )
        )
    return gts


class TestCorrupt:
    def test_identity_noise_is_identity(self, table6):
        gts = two_track_gts(table6)
        preds, proposals = corrupt(gts, NoiseSpec(), table6)
        for gt, pred in zip(gts, preds):
            np.testing.assert_array_equal(pred.classes, gt.classes)
            np.testing.assert_array_equal(pred.instances, gt.instances)
        # first appearance is emerging, later frames tracked
        f0 = [p for p in proposals[0] if p.instance_id is not None]
        assert [(p.origin, p.track_id) for p in f0] == [
            ("emerging", None), ("emerging", None),
        ]
        f1 = [p for p in proposals[1] if p.instance_id is not None]
        assert [(p.origin, p.track_id) for p in f1] == [
            ("tracked", 1), ("tracked", 2),
        ]
        assert all(p.voxel_count == 1 for p in f0 + f1)
        assert all(0.0 <= p.score <= 1.0 for frame in proposals for p in frame)

    def test_no_stuff_proposals_without_stuff(self, table6):
        gts = two_track_gts(table6)
        _, proposals = corrupt(gts, NoiseSpec(), table6)
        # the scene has no stuff voxels, so every proposal names an instance
        assert all(p.instance_id is not None for frame in proposals for p in frame)

    def test_stuff_proposals_always_emerging(self, table6):
        spec = GridSpec((2, 1, 1), 0.5, 0.0)
        gts = [
            PanopticGrid(
                spec=spec,
                classes=np.array([1, 0], dtype=np.uint16),
                instances=np.zeros(2, dtype=np.uint32),
                frame_index=f,
            )
            for f in range(2)
        ]
        _, proposals = corrupt(gts, NoiseSpec(), table6)
        for frame in proposals:
            (p,) = frame
            assert p.class_id == 1
            assert p.origin == "emerging"
            assert p.instance_id is None
            assert p.voxel_count == 1

    def test_id_switch(self, table6):
        gts = two_track_gts(table6)
        noise = NoiseSpec(id_switches=(IdSwitch(frame=2, track_id=1),))
        preds, proposals = corrupt(gts, noise, table6)
        assert preds[1].instances[1] == 1
        assert preds[2].instances[1] == 3  # fresh id above max gt id
        assert preds[3].instances[1] == 3  # switch persists
        assert preds[2].instances[4] == 2  # other track untouched
        # the switched id is a new emerging proposal at the switch frame
        sw = [p for p in proposals[2] if p.instance_id == 3]
        assert [p.origin for p in sw] == ["emerging"]

    def test_drop_window(self, table6):
        gts = two_track_gts(table6)
        noise = NoiseSpec(drops=(Drop(track_id=2, start=1, end=2),))
        preds, proposals = corrupt(gts, noise, table6)
        assert preds[0].instances[4] == 2
        for f in (1, 2):
            assert preds[f].instances[4] == 0
            assert preds[f].classes[4] == 0  # dropped to free
            assert not any(p.instance_id == 2 for p in proposals[f])
        assert preds[3].instances[4] == 2

    def test_flip_prob_one_flips_every_voxel(self, table6):
        spec = GridSpec((4, 1, 1), 0.5, 0.0)
        gts = [
            PanopticGrid(
                spec=spec,
                classes=np.array([1, 1, 1, 1], dtype=np.uint16),
                instances=np.zeros(4, dtype=np.uint32),
            )
        ]
        preds, _ = corrupt(gts, NoiseSpec(class_flip_prob={1: 1.0}), table6)
        assert not (preds[0].classes == 1).any()
        assert not (preds[0].classes == 0).any()  # never flips into free
        preds[0].validate_labels(table6)
        # stuff flipped into a thing class must carry a fresh instance id
        thing_sel = np.isin(preds[0].classes, (3, 4))
        assert (preds[0].instances[thing_sel] != 0).all()
        assert (preds[0].instances[~thing_sel] == 0).all()

    def test_erosion_removes_small_instances(self, table6):
        gts = two_track_gts(table6, nframes=1)
        preds, proposals = corrupt(gts, NoiseSpec(erosion_radius=1), table6)
        assert (preds[0].instances == 0).all()
        assert (preds[0].classes == 0).all()
        assert proposals[0] == []

    def test_dilation_grows_into_free_only(self, table6):
        spec = GridSpec((5, 1, 1), 0.5, 0.0)
        classes = np.array([0, 3, 1, 4, 0], dtype=np.uint16)
        instances = np.array([0, 1, 0, 2, 0], dtype=np.uint32)
        gts = [PanopticGrid(spec=spec, classes=classes, instances=instances)]
        preds, _ = corrupt(gts, NoiseSpec(dilation_radius=1), table6)
        np.testing.assert_array_equal(preds[0].instances, [1, 1, 0, 2, 2])
        np.testing.assert_array_equal(preds[0].classes, [3, 3, 1, 4, 4])

    def test_dilation_claim_order_prefers_smaller_id(self, table6):
        spec = GridSpec((3, 1, 1), 0.5, 0.0)
        classes = np.array([4, 0, 3], dtype=np.uint16)
        instances = np.array([2, 0, 1], dtype=np.uint32)
        gts = [PanopticGrid(spec=spec, classes=classes, instances=instances)]
        preds, _ = corrupt(gts, NoiseSpec(dilation_radius=1), table6)
        # the middle free voxel is adjacent to both; id 1 claims first
        assert preds[0].instances[1] == 1
        assert preds[0].classes[1] == 3

    def test_deterministic_under_seed(self, table6):
        gts = two_track_gts(table6)
        noise = NoiseSpec(class_flip_prob={3: 0.5}, seed=7)
        a_preds, a_props = corrupt(gts, noise, table6)
        b_preds, b_props = corrupt(gts, noise, table6)
        for x, y in zip(a_preds, b_preds):
            np.testing.assert_array_equal(x.classes, y.classes)
            np.testing.assert_array_equal(x.instances, y.instances)
        assert a_props == b_props
        c_props = corrupt(gts, NoiseSpec(class_flip_prob={3: 0.5}, seed=8), table6)[1]
        assert a_props != c_props

    def test_unknown_track_events(self, table6):
        gts = two_track_gts(table6)
        with pytest.raises(UnknownTrack, match="unknown track 9"):
            corrupt(gts, NoiseSpec(id_switches=(IdSwitch(0, 9),)), table6)
        with pytest.raises(UnknownTrack, match="missing frame 99"):
            corrupt(gts, NoiseSpec(id_switches=(IdSwitch(99, 1),)), table6)
        with pytest.raises(UnknownTrack, match="unknown track 9"):
            corrupt(gts, NoiseSpec(drops=(Drop(9, 0, 1),)), table6)
        with pytest.raises(ValueError, match="start"):
            corrupt(gts, NoiseSpec(drops=(Drop(1, 2, 1),)), table6)


SCENARIO_DOC = {
    "sequence_id": "yaml-demo",
    "frames": 2,
    "rate_hz": 2.0,
    "grid": {"dims": [8, 8, 4], "voxel_size": [0.5, 0.5, 0.5], "origin": [-2.0, -2.0, -1.0]},
    "classes": [
        {"id": 0, "name": "free", "role": "free"},
        {"id": 1, "name": "ground", "role": "stuff"},
        {"id": 2, "name": "vehicle", "role": "thing"},
    ],
    "ground": {"class": "ground", "layers": 1},
    "actors": [
        {
            "track_id": 1,
            "class": "vehicle",
            "size": [1.0, 1.0, 0.5],
            "waypoints": [{"frame": 0, "center": [0.25, 0.25, 0.25]}],
        }
    ],
}


class TestLoaders:
    def test_scenario_from_dict(self):
        sc = scenario_from_dict(SCENARIO_DOC)
        assert sc.sequence_id == "yaml-demo"
        assert sc.ground_class == 1
        assert sc.actors[0].class_id == 2
        _, sems, _, gts = render_sequence(sc)
        assert (gts[0].instances != 0).any()

    def test_missing_key_named(self):
        doc = dict(SCENARIO_DOC)
        del doc["grid"]
        with pytest.raises(ManifestError, match="'grid'"):
            scenario_from_dict(doc)

    def test_load_scenario_rejects_non_mapping(self, tmp_path):
        p = tmp_path / "sc.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ManifestError, match="mapping"):
            load_scenario(p)

    def test_load_scenario_roundtrip(self, tmp_path):
        p = tmp_path / "sc.yaml"
        p.write_text(yaml.safe_dump(SCENARIO_DOC))
        sc = load_scenario(p)
        assert sc.frames == 2

    def test_noise_from_dict_maps_names(self, table6):
        doc = {
            "class_flip_prob": {"ground": 0.25, "vehicle": 0.5},
            "erosion_radius": 1,
            "id_switches": [{"frame": 2, "track_id": 1}],
            "drops": [{"track_id": 3, "start": 1, "end": 4}],
            "seed": 5,
        }
        noise = noise_from_dict(doc, table6)
        assert noise.class_flip_prob == {1: 0.25, 3: 0.5}
        assert noise.erosion_radius == 1
        assert noise.id_switches == (IdSwitch(2, 1),)
        assert noise.drops == (Drop(3, 1, 4),)
        assert noise.seed == 5

    def test_load_noise(self, tmp_path, table6):
        p = tmp_path / "noise.yaml"
        p.write_text("class_flip_prob:\n  ground: 0.1\ndilation_radius: 1\n")
        noise = load_noise(p, table6)
        assert noise.class_flip_prob == {1: 0.1}
        assert noise.dilation_radius == 1
        p.write_text("- nope\n")
        with pytest.raises(ManifestError, match="mapping"):
            load_noise(p, table6)

    def test_sample_files_render(self):
        sc = load_scenario("samples/scenario.yaml")
        noise = load_noise("samples/noise.yaml", sc.table)
        _, _, _, gts = render_sequence(sc)
        preds, proposals = corrupt(gts, noise, sc.table)
        assert len(preds) == sc.frames
        assert all(len(p) > 0 for p in proposals)
