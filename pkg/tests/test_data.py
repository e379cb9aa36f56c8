import json

import numpy as np
import pytest

from posehoi.data import (
    Dataset,
    HumanRecord,
    ImageRecord,
    ObjectRecord,
    SchemaError,
    SyntheticSpec,
    generate_synthetic,
    ground_truth_pairs,
    load_dataset,
    pair_proposals,
    render_all,
    render_image,
    save_dataset,
)
from posehoi.geometry import KEYPOINT_COUNT, KEYPOINT_NAMES, Box, Pose


def small_spec(**overrides):
    base = dict(image_size=48, n_images=6, seed=3)
    base.update(overrides)
    return SyntheticSpec(**base)


class TestSchema:
    def test_empty_dataset_roundtrip(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text(json.dumps({
            "version": 1, "categories": [], "actions": [], "action_bindings": {},
            "images": [], "humans": [], "objects": [], "interactions": [],
        }))
        ds = load_dataset(path)
        assert ds.images == [] and ds.humans == []

    def test_wrong_version_rejected(self, tmp_path):
        path = tmp_path / "v.json"
        path.write_text(json.dumps({"version": 99}))
        with pytest.raises(SchemaError, match="version"):
            load_dataset(path)

    def test_errors_enumerate_every_offender(self, tmp_path):
        ds = generate_synthetic(small_spec())
        path = tmp_path / "ds.json"
        save_dataset(ds, path)
        doc = json.loads(path.read_text())
        doc["humans"][0]["pose"] = doc["humans"][0]["pose"][:16]   # 16 joints
        doc["humans"][1]["score"] = 1.5                            # bad score
        doc["objects"][0]["image_id"] = 777                        # dangling ref
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            load_dataset(path)
        message = str(err.value)
        assert f"human {doc['humans'][0]['id']}" in message
        assert f"human {doc['humans'][1]['id']}" in message
        assert f"object {doc['objects'][0]['id']}" in message

    def test_out_of_bounds_box_rejected(self, tmp_path):
        ds = generate_synthetic(small_spec())
        path = tmp_path / "ds.json"
        save_dataset(ds, path)
        doc = json.loads(path.read_text())
        doc["objects"][0]["box"] = [-5.0, 0.0, 10.0, 10.0]
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="outside image bounds"):
            load_dataset(path)

    def test_roundtrip_equality(self, tmp_path):
        ds = generate_synthetic(small_spec(box_jitter=0.05, pose_noise=0.01))
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_dataset(ds, a)
        save_dataset(load_dataset(a), b)
        assert a.read_bytes() == b.read_bytes()


class TestPairing:
    def test_product_count(self):
        ds = generate_synthetic(small_spec(n_images=10))
        for im in ds.images:
            props = pair_proposals(ds, im.id)
            assert len(props) == len(ds.humans_in(im.id)) * len(ds.objects_in(im.id))

    def test_no_objects_gives_empty_list(self):
        ds = Dataset([], [], {}, [ImageRecord(0, 32, 32)], [], [], [])
        assert pair_proposals(ds, 0) == []

    def test_person_class_object_is_paired(self):
        pose = Pose(np.tile([16.0, 16.0], (KEYPOINT_COUNT, 1)))
        human = HumanRecord(0, 0, Box(4, 4, 28, 30), 0.9, pose, Box(4, 4, 28, 30), pose)
        person_obj = ObjectRecord(0, 0, Box(5, 5, 27, 29), 0, 0.8, Box(5, 5, 27, 29))
        ball = ObjectRecord(1, 0, Box(1, 1, 6, 6), 1, 0.7, Box(1, 1, 6, 6))
        ds = Dataset(["person", "ball"], ["hold"], {"hold": "wrist"},
                     [ImageRecord(0, 32, 32)], [human], [person_obj, ball], [])
        props = pair_proposals(ds, 0)
        assert len(props) == 2
        assert props[0].object_class == 0  # the person-class object pair exists

    def test_unknown_image_raises(self):
        ds = generate_synthetic(small_spec())
        with pytest.raises(KeyError):
            pair_proposals(ds, 999)


class TestGenerator:
    def test_determinism_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_dataset(generate_synthetic(small_spec(seed=11)), a)
        save_dataset(generate_synthetic(small_spec(seed=11)), b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_dataset(generate_synthetic(small_spec(seed=1)), a)
        save_dataset(generate_synthetic(small_spec(seed=2)), b)
        assert a.read_bytes() != b.read_bytes()

    def test_labels_follow_nearest_anchor_rule(self):
        spec = small_spec(n_images=20)
        ds = generate_synthetic(spec)
        bindings = ds.action_bindings
        anchor_idx = {
            action: [i for i, n in enumerate(KEYPOINT_NAMES) if n == joint or n.endswith("_" + joint)]
            for action, joint in bindings.items()
        }
        checked = 0
        for inter in ds.interactions:
            human = next(h for h in ds.humans if h.id == inter.human_id)
            obj = next(o for o in ds.objects if o.id == inter.object_id)
            ox, oy = obj.gt_box.center
            best_action, best = None, np.inf
            for ai, action in enumerate(ds.actions):
                for ji in anchor_idx[action]:
                    jx, jy = human.gt_pose.joints[ji]
                    d = float(np.hypot(ox - jx, oy - jy))
                    if d < best:
                        best, best_action = d, ai
            radius = spec.proximity_frac * human.gt_box.height
            assert best <= radius
            assert inter.actions == (best_action,)
            checked += 1
        assert checked > 0

    def test_nearest_anchor_classifier_is_perfect_on_noiseless_data(self):
        # the separability ceiling: geometry alone decides every pair label
        spec = small_spec(n_images=15)
        ds = generate_synthetic(spec)
        bindings = ds.action_bindings
        anchor_idx = {
            a: [i for i, n in enumerate(KEYPOINT_NAMES) if n == j or n.endswith("_" + j)]
            for a, j in bindings.items()
        }
        agreement = total = 0
        for im in ds.images:
            for h in ds.humans_in(im.id):
                for o in ds.objects_in(im.id):
                    ox, oy = o.gt_box.center
                    best_action, best = None, np.inf
                    for ai, action in enumerate(ds.actions):
                        for ji in anchor_idx[action]:
                            jx, jy = h.gt_pose.joints[ji]
                            d = float(np.hypot(ox - jx, oy - jy))
                            if d < best:
                                best, best_action = d, ai
                    radius = spec.proximity_frac * h.gt_box.height
                    predicted = (best_action,) if best <= radius else ()
                    total += 1
                    agreement += predicted == ds.pair_actions(h.id, o.id)
        assert total > 0 and agreement == total

    def test_negative_pairs_exist(self):
        ds = generate_synthetic(small_spec(n_images=25, positive_frac=0.5))
        pairs = sum(len(ds.humans_in(im.id)) * len(ds.objects_in(im.id)) for im in ds.images)
        assert 0 < len(ds.interactions) < pairs

    def test_poses_satisfy_limb_length_bounds(self):
        ds = generate_synthetic(small_spec(n_images=10))
        from posehoi.spatial import COCO_SKELETON
        for h in ds.humans:
            height = h.gt_box.height
            joints = h.gt_pose.joints
            for a, b in COCO_SKELETON:
                length = float(np.linalg.norm(joints[a] - joints[b]))
                assert length <= 0.55 * height

    def test_scores_within_configured_range(self):
        ds = generate_synthetic(small_spec(score_range=(0.7, 1.0)))
        for rec in ds.humans + ds.objects:
            assert 0.7 <= rec.score <= 1.0

    def test_jitter_keeps_boxes_valid_and_in_bounds(self):
        ds = generate_synthetic(small_spec(box_jitter=0.1, n_images=12))
        for rec in ds.humans + ds.objects:
            assert rec.box.x1 < rec.box.x2 and rec.box.y1 < rec.box.y2
            assert 0 <= rec.box.x1 and rec.box.x2 <= 48

    def test_bad_binding_rejected(self):
        with pytest.raises(ValueError, match="unknown joint"):
            SyntheticSpec(actions=(("hold", "tentacle"),))

    def test_spec_json_roundtrip(self, tmp_path):
        spec = small_spec(box_jitter=0.1)
        path = tmp_path / "spec.json"
        spec.to_json(path)
        assert SyntheticSpec.from_json(path) == spec

    def test_unknown_spec_key_rejected(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"image_size": 32, "bogus": 1}))
        with pytest.raises(SchemaError, match="bogus"):
            SyntheticSpec.from_json(path)


class TestRendering:
    def test_rendering_is_deterministic(self):
        ds = generate_synthetic(small_spec())
        a = render_image(ds, 0)
        b = render_image(ds, 0)
        assert np.array_equal(a, b)

    def test_rendered_shape_and_range(self):
        ds = generate_synthetic(small_spec())
        img = render_image(ds, 0)
        assert img.shape == (48, 48, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_objects_paint_their_color_at_center(self):
        ds = generate_synthetic(small_spec(n_images=8))
        for o in ds.objects[:5]:
            img = render_image(ds, o.image_id)
            cx, cy = o.gt_box.center
            assert np.allclose(img[int(cy), int(cx)], o.color, atol=1e-12)

    def test_render_all_stacks_in_id_order(self):
        ds = generate_synthetic(small_spec(n_images=4))
        stack = render_all(ds)
        assert stack.shape == (4, 48, 48, 3)
        assert np.array_equal(stack[2], render_image(ds, 2))

    def test_ground_truth_pairs_use_true_geometry(self):
        ds = generate_synthetic(small_spec(box_jitter=0.1))
        for im in ds.images:
            for gh, go, actions in ground_truth_pairs(ds, im.id):
                assert actions
                # gt boxes are unjittered, hence within the nominal bounds
                assert 0 <= gh.x1 < gh.x2 <= 48
