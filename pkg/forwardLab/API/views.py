"""
This module contains the REST views of forwardLab: recorded training runs, their per-layer curves and the
diagnostics endpoint.
"""
from rest_framework import mixins, status, viewsets
from rest_framework.decorators import action
from rest_framework.filters import OrderingFilter
from rest_framework.response import Response
from rest_framework.views import APIView

from diagnostics.metrics import LayerCurve
from diagnostics.report import diagnose
from engine.exceptions import MetricError
from training.models import TrainingRun
from training.tasks import run_training

from .serializers import DiagnoseSerializer, TrainingRunCreateSerializer, TrainingRunSerializer


class TrainingRunViewSet(
    mixins.CreateModelMixin,
    mixins.ListModelMixin,
    mixins.RetrieveModelMixin,
    viewsets.GenericViewSet
):
    """
    A ViewSet listing and inspecting training runs, and queueing new ones. Supports filtering by status and
    name and ordering by creation time or accuracy.
    """
    queryset = TrainingRun.objects.all()
    serializer_class = TrainingRunSerializer
    filter_backends = [OrderingFilter]
    ordering_fields = ['created', 'best_top1', 'fused_top1']

    def get_serializer_class(self):
        if self.action == 'create':
            return TrainingRunCreateSerializer
        return super().get_serializer_class()

    def get_queryset(self):
        """
        Filters the queryset by the ``status`` and ``name`` query parameters.
        """
        queryset = super().get_queryset()
        status_filter = self.request.query_params.get('status', None)
        name_filter = self.request.query_params.get('name', None)

        if status_filter:
            queryset = queryset.filter(status=status_filter)
        if name_filter:
            queryset = queryset.filter(name=name_filter)

        return queryset

    def create(self, request, *args, **kwargs):
        """
        Store a new run and queue it for the Celery worker.
        """
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        run = serializer.save()
        run_training.delay(run.pk)
        return Response(TrainingRunSerializer(run).data, status=status.HTTP_201_CREATED)

    @action(detail=True, methods=['get'])
    def curve(self, request, pk=None):
        """
        The run's per-layer top-1 curve of its latest epoch, as consumed by the diagnostics endpoint.
        """
        run = self.get_object()
        rows = list(run.latest_metrics())
        if not rows:
            return Response({"message": "No metrics recorded yet."}, status=status.HTTP_404_NOT_FOUND)
        curve = LayerCurve([row.top1 for row in rows], name=run.name, split=rows[0].split,
                           meta={'layers': [row.layer for row in rows], 'epoch': rows[0].epoch})
        return Response(curve.as_dict())


class DiagnoseAPIView(APIView):
    """
    API endpoint computing Decline Area, Tail Retention, N_eff and, for two curves, Shallow/Deep Gain and the
    metric deltas.
    """

    def post(self, request):
        serializer = DiagnoseSerializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        data = serializer.validated_data

        curves = [LayerCurve(data['curve_a'], name=data['name_a'])]
        weights = [data.get('weights_a')]
        if 'curve_b' in data:
            curves.append(LayerCurve(data['curve_b'], name=data['name_b']))
            weights.append(data.get('weights_b'))
        try:
            report = diagnose(curves, weights)
        except MetricError as exc:
            return Response({"message": str(exc)}, status=status.HTTP_400_BAD_REQUEST)
        return Response(report)
