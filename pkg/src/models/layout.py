import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

from errors import DataValidationError, UnknownPageError


@dataclass(frozen=True, slots=True)
class Passage:
    """axis-aligned paragraph rectangle in document pixels (y from page top)."""

    passage_id: int
    page: int
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def right(self) -> float:
        return self.x + self.w

    def contains(self, x: float, y: float) -> bool:
        return self.x <= x <= self.right and self.y <= y <= self.bottom

    def distance_to(self, x: float, y: float) -> float:
        """euclidean distance from a point to this rectangle, 0 inside."""
        dx = max(self.x - x, 0.0, x - self.right)
        dy = max(self.y - y, 0.0, y - self.bottom)
        return math.hypot(dx, dy)

    def overlaps(self, other: "Passage") -> bool:
        return (
            self.x < other.right
            and other.x < self.right
            and self.y < other.bottom
            and other.y < self.bottom
        )


@dataclass(frozen=True, slots=True)
class PageSpec:
    page: int
    page_w: float
    page_h: float
    passages: Tuple[Passage, ...] = ()

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x <= self.page_w and 0 <= y <= self.page_h


@dataclass(frozen=True)
class PageLayout:
    """passage geometry of a whole document.

    Args:
        pages (Tuple[PageSpec, ...]): pages ordered by index

    Raises:
        DataValidationError: a passage leaves its page, overlaps a sibling,
            has a non-positive size, or reuses an id
    """

    pages: Tuple[PageSpec, ...]
    _by_page: Dict[int, PageSpec] = field(init=False, repr=False, compare=False)
    _by_id: Dict[int, Passage] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_page: Dict[int, PageSpec] = {}
        by_id: Dict[int, Passage] = {}

        for spec in self.pages:
            if spec.page < 1 or spec.page in by_page:
                raise DataValidationError(f"bad or duplicate page index {spec.page}")
            if spec.page_w <= 0 or spec.page_h <= 0:
                raise DataValidationError(f"page {spec.page} has non-positive size")
            by_page[spec.page] = spec

            for i, p in enumerate(spec.passages):
                if p.page != spec.page:
                    raise DataValidationError(f"passage {p.passage_id} filed under wrong page")
                if p.w <= 0 or p.h <= 0:
                    raise DataValidationError(f"passage {p.passage_id} has non-positive size")
                if p.x < 0 or p.y < 0 or p.right > spec.page_w or p.bottom > spec.page_h:
                    raise DataValidationError(f"passage {p.passage_id} leaves page {spec.page}")
                if p.passage_id in by_id:
                    raise DataValidationError(f"duplicate passage id {p.passage_id}")
                for q in spec.passages[:i]:
                    if p.overlaps(q):
                        raise DataValidationError(
                            f"passages {q.passage_id} and {p.passage_id} overlap"
                        )
                by_id[p.passage_id] = p

        object.__setattr__(self, "_by_page", by_page)
        object.__setattr__(self, "_by_id", by_id)

    def page(self, index: int) -> PageSpec:
        try:
            return self._by_page[index]
        except KeyError:
            raise UnknownPageError(f"page {index} not in layout") from None

    def has_page(self, index: int) -> bool:
        return index in self._by_page

    def passage(self, passage_id: int) -> Passage:
        return self._by_id[passage_id]

    def has_passage(self, passage_id: int) -> bool:
        return passage_id in self._by_id

    def passages_on(self, page: int) -> Tuple[Passage, ...]:
        spec = self._by_page.get(page)
        return spec.passages if spec is not None else ()

    def iter_passages(self) -> Iterator[Passage]:
        for spec in self.pages:
            yield from spec.passages

    @property
    def passage_ids(self) -> List[int]:
        return sorted(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)
